#ifndef PROXYNORM_H
#define PROXYNORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PnActivationKind {
  PN_ACTIVATION_KIND_IDENTITY = 0,
  PN_ACTIVATION_KIND_RELU = 1,
  PN_ACTIVATION_KIND_TWO_SLOPE = 2,
  PN_ACTIVATION_KIND_SWISH = 3,
} PnActivationKind;

typedef enum PnNormKind {
  PN_NORM_KIND_BATCH_NORM = 0,
  PN_NORM_KIND_LAYER_NORM = 1,
  PN_NORM_KIND_INSTANCE_NORM = 2,
  PN_NORM_KIND_GROUP_NORM = 3,
} PnNormKind;

typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_SHAPE = 2,
  PN_STATUS_CONFIG = 3,
  PN_STATUS_PARAMETER = 4,
  PN_STATUS_DOMAIN = 5,
  PN_STATUS_DEGENERATE = 6,
  PN_STATUS_INSUFFICIENT_DATA = 7,
  PN_STATUS_PROPAGATION = 8,
  PN_STATUS_HYPOTHESIS = 9,
  PN_STATUS_IO = 10,
  PN_STATUS_PANIC = 11,
} PnStatus;

/**
 * Opaque random net with sampled parameters.
 */
typedef struct PnRandomNet PnRandomNet;

/**
 * Opaque activation tensor of shape (n, h, w, c), channel-last.
 */
typedef struct PnTensor PnTensor;

typedef struct PnPowerTerms {
  double p_total;
  double p1;
  double p2;
  double p3;
  double p4;
} PnPowerTerms;

/**
 * Activation descriptor; the slopes are read only for `TWO_SLOPE`.
 */
typedef struct PnActivation {
  enum PnActivationKind kind;
  double a_pos;
  double a_neg;
} PnActivation;

/**
 * Layer-level diagnostics of one random-net layer.
 */
typedef struct PnLayerSummary {
  size_t layer;
  struct PnPowerTerms terms;
  double rho;
  double linearity_residual;
} PnLayerSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 */
size_t pn_last_error_message(char *buf, size_t len);

/**
 * Creates a tensor from `len = n*h*w*c` channel-last values.
 */
enum PnStatus pn_tensor_new(size_t n,
                            size_t h,
                            size_t w,
                            size_t c,
                            const double *data,
                            size_t len,
                            struct PnTensor **out);

void pn_tensor_free(struct PnTensor *t);

/**
 * Writes (n, h, w, c) into `out[0..4]`.
 */
enum PnStatus pn_tensor_shape(const struct PnTensor *t, size_t *out);

/**
 * Copies the tensor's values into `out`, which must hold `len` values
 * with `len` equal to the tensor length.
 */
enum PnStatus pn_tensor_copy_data(const struct PnTensor *t, double *out, size_t len);

/**
 * Normalizes `x`; `groups` is read only for `GROUP_NORM`.
 */
enum PnStatus pn_normalize(const struct PnTensor *x,
                           enum PnNormKind kind,
                           size_t groups,
                           double eps,
                           struct PnTensor **out);

/**
 * Power decomposition of `y`. `per_channel` may be null; otherwise it
 * must hold `channels` entries equal to the tensor's channel count.
 */
enum PnStatus pn_power_decomposition(const struct PnTensor *y,
                                     struct PnPowerTerms *per_channel,
                                     size_t channels,
                                     struct PnPowerTerms *layer,
                                     double *rho);

/**
 * Mean and variance of `phi(gamma * Y + beta)`, `Y ~ N(mean, std²)`, on
 * an `n`-point quantile grid.
 */
enum PnStatus pn_proxy_moments(struct PnActivation phi,
                               double gamma,
                               double beta,
                               double mean,
                               double std,
                               size_t n,
                               double *out_mean,
                               double *out_var);

enum PnStatus pn_inv_norm_cdf(double p, double *out);

/**
 * Proxy-normalized activation of `y` with zero additional parameters.
 * `gamma` and `beta` hold one value per channel.
 */
enum PnStatus pn_pn_act(const struct PnTensor *y,
                        const double *gamma,
                        const double *beta,
                        size_t channels,
                        struct PnActivation phi,
                        double eps,
                        size_t n_quantiles,
                        struct PnTensor **out);

/**
 * Builds a random net from a NUL-terminated JSON random-net config.
 */
enum PnStatus pn_randomnet_build_json(const char *config_json, struct PnRandomNet **out);

/**
 * Builds a uniform-width net with the standard parameter distributions
 * and an exact (eps = 0) norm.
 */
enum PnStatus pn_randomnet_build_uniform(size_t depth,
                                         size_t width,
                                         size_t input_channels,
                                         enum PnNormKind norm,
                                         size_t groups,
                                         struct PnActivation phi,
                                         bool use_pn,
                                         bool use_ws,
                                         uint64_t seed,
                                         struct PnRandomNet **out);

void pn_randomnet_free(struct PnRandomNet *net);

size_t pn_randomnet_depth(const struct PnRandomNet *net);

/**
 * Runs `batch` through the net and writes one summary per layer into
 * `out`, which must hold `depth` entries.
 */
enum PnStatus pn_randomnet_forward(const struct PnRandomNet *net,
                                   const struct PnTensor *batch,
                                   struct PnLayerSummary *out,
                                   size_t depth);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXYNORM_H */
