#ifndef SEMTX_H
#define SEMTX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SemtxChannel {
  SEMTX_CHANNEL_AWGN = 0,
  SEMTX_CHANNEL_RAYLEIGH_FLAT = 1,
  SEMTX_CHANNEL_MULTIPATH = 2,
} SemtxChannel;

typedef enum SemtxPower {
  SEMTX_POWER_OFF = 0,
  SEMTX_POWER_UNIFORM = 1,
  SEMTX_POWER_LEARNED = 2,
} SemtxPower;

typedef enum SemtxScheme {
  SEMTX_SCHEME_JSCC = 0,
  SEMTX_SCHEME_JSCC_RANDOM_SNR = 1,
  SEMTX_SCHEME_BASELINE = 2,
} SemtxScheme;

// Result of every fallible call.
typedef enum SemtxStatus {
  SEMTX_STATUS_OK = 0,
  SEMTX_STATUS_NULL_POINTER = 1,
  SEMTX_STATUS_INVALID_INPUT = 2,
  SEMTX_STATUS_SHAPE_MISMATCH = 3,
  SEMTX_STATUS_OUT_OF_RANGE = 4,
  SEMTX_STATUS_CONFIG = 5,
  SEMTX_STATUS_CAPACITY = 6,
  SEMTX_STATUS_NOT_FOUND = 7,
  SEMTX_STATUS_MALFORMED = 8,
  SEMTX_STATUS_TIMEOUT = 9,
  SEMTX_STATUS_IO = 10,
  SEMTX_STATUS_DIVERGED = 11,
  // The output buffer is too small; the required length was written.
  SEMTX_STATUS_BUFFER_TOO_SMALL = 12,
  SEMTX_STATUS_PANIC = 13,
} SemtxStatus;

// Opaque trained codec.
typedef struct SemtxCodec SemtxCodec;

// Opaque running emulator.
typedef struct SemtxEmulator SemtxEmulator;

// One end-to-end run. Use `semtx_run_config_default` to fill defaults.
typedef struct SemtxRunConfig {
  enum SemtxScheme scheme;
  enum SemtxChannel channel;
  // Paths of the multipath channel; ignored otherwise.
  uint32_t num_paths;
  // `INFINITY` for a noiseless channel.
  double snr_db;
  // Fixed mask ratio in `[0, 0.7]`; negative selects it from SNR and
  // object area.
  double mask_ratio;
  // Nonzero for perfect CSI, zero for pilot-based estimates.
  uint8_t perfect_csi;
  enum SemtxPower power;
  // Nonzero for soft-decision decoding in the baseline.
  uint8_t soft_decisions;
  uint32_t patch_size;
  uint64_t seed;
} SemtxRunConfig;

typedef struct SemtxBox {
  uint8_t class_id;
  uint32_t x;
  uint32_t y;
  uint32_t w;
  uint32_t h;
} SemtxBox;

typedef struct SemtxReport {
  double psnr_db;
  double ssim;
  double cs_proxy;
  double psnr_cs;
  double ssim_cs;
  // Mask ratio actually applied.
  double mask_ratio;
  // 1 if the image was delivered (always 1 for the learned codec).
  uint8_t delivered;
} SemtxReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *semtx_version(void);

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *semtx_last_error(void);

struct SemtxRunConfig semtx_run_config_default(void);

// Loads a checkpoint written by `semtx train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out_codec` must be writable.
enum SemtxStatus semtx_codec_load(const char *path, struct SemtxCodec **out_codec);

// # Safety
// `codec` must come from `semtx_codec_load` and not be used afterwards.
void semtx_codec_free(struct SemtxCodec *codec);

// Patch side, patches per image and channels the codec was trained for.
// Images must tile into exactly `n_patches` patches of that side.
//
// # Safety
// All pointers must be valid.
enum SemtxStatus semtx_codec_layout(const struct SemtxCodec *codec,
                                    uint32_t *out_patch_size,
                                    uint32_t *out_n_patches,
                                    uint32_t *out_channels);

// Sends one image through the full chain and writes the reconstruction
// (same shape as the input) and its scores. `codec` may be null for the
// baseline scheme; `boxes` may be null when `n_boxes` is 0.
//
// # Safety
// `pixels` and `out_pixels` must hold `height·width·channels` bytes;
// `boxes` must hold `n_boxes` entries.
enum SemtxStatus semtx_transmit_image(const struct SemtxCodec *codec,
                                      const struct SemtxRunConfig *config,
                                      const uint8_t *pixels,
                                      uint32_t height,
                                      uint32_t width,
                                      uint32_t channels,
                                      const struct SemtxBox *boxes,
                                      size_t n_boxes,
                                      uint8_t *out_pixels,
                                      struct SemtxReport *out_report);

// PSNR in dB and SSIM of two equally shaped images.
//
// # Safety
// Both buffers must hold `height·width·channels` bytes.
enum SemtxStatus semtx_image_quality(const uint8_t *reference,
                                     const uint8_t *test,
                                     uint32_t height,
                                     uint32_t width,
                                     uint32_t channels,
                                     double *out_psnr_db,
                                     double *out_ssim);

// Samples in one frame.
size_t semtx_frame_len(void);

// Data symbols carried by one frame.
size_t semtx_frame_capacity(void);

// Packs `n_symbols` complex symbols into back-to-back frames. On
// `SEMTX_STATUS_BUFFER_TOO_SMALL`, `out_len` holds the needed length.
//
// # Safety
// `symbols` must hold `2·n_symbols` doubles and `out_samples` `2·out_cap`.
enum SemtxStatus semtx_frame_pack(const double *symbols,
                                  size_t n_symbols,
                                  uint8_t payload_type,
                                  uint8_t mr_index,
                                  double *out_samples,
                                  size_t out_cap,
                                  size_t *out_len);

// Parses back-to-back frames and writes every data symbol. With `search`
// nonzero each frame start is found by preamble search first.
//
// # Safety
// `samples` must hold `2·n_samples` doubles and `out_symbols` `2·out_cap`.
enum SemtxStatus semtx_frame_unpack(const double *samples,
                                    size_t n_samples,
                                    uint8_t search,
                                    double *out_symbols,
                                    size_t out_cap,
                                    size_t *out_len);

// Starts a channel emulator on `bind_addr` (e.g. `"127.0.0.1:0"`).
//
// # Safety
// `bind_addr` must be a NUL-terminated string; `out_emulator` writable.
enum SemtxStatus semtx_emulator_start(const char *bind_addr, struct SemtxEmulator **out_emulator);

// UDP port the emulator listens on.
//
// # Safety
// `emulator` must be a live handle.
enum SemtxStatus semtx_emulator_port(const struct SemtxEmulator *emulator, uint16_t *out_port);

// Stops the emulator and releases the handle.
//
// # Safety
// `emulator` must come from `semtx_emulator_start` and not be used afterwards.
enum SemtxStatus semtx_emulator_stop(struct SemtxEmulator *emulator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMTX_H */
