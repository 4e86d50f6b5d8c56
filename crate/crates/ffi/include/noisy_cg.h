#ifndef NOISY_CG_H
#define NOISY_CG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcgNoiseKind {
  NCG_NOISE_KIND_EXACT = 0,
  NCG_NOISE_KIND_ADVERSARIAL_B = 1,
  NCG_NOISE_KIND_STOCHASTIC_B = 2,
  NCG_NOISE_KIND_MATRIX = 3,
  NCG_NOISE_KIND_COMBINED_ADVERSARIAL = 4,
  NCG_NOISE_KIND_COMBINED_STOCHASTIC = 5,
} NcgNoiseKind;

typedef enum NcgStatus {
  NCG_STATUS_OK = 0,
  NCG_STATUS_NULL_POINTER = 1,
  NCG_STATUS_INVALID_ARGUMENT = 2,
  NCG_STATUS_DIMENSION_MISMATCH = 3,
  NCG_STATUS_DENSE_CAP_EXCEEDED = 4,
  NCG_STATUS_NOT_SYMMETRIC = 5,
  NCG_STATUS_NON_FINITE = 6,
  NCG_STATUS_OUT_OF_RANGE = 7,
  NCG_STATUS_PANIC = 8,
  NCG_STATUS_INTERNAL = 9,
} NcgStatus;

typedef enum NcgStopKind {
  NCG_STOP_KIND_MAX_ITER = 0,
  // Stops when the search direction norm drops below `eps`.
  NCG_STOP_KIND_GRAD_NORM = 1,
  // Uses the noise model's own deltas.
  NCG_STOP_KIND_NEMIROVSKY = 2,
} NcgStopKind;

typedef enum NcgTerminal {
  NCG_TERMINAL_MAX_ITER = 0,
  NCG_TERMINAL_TOLERANCE_REACHED = 1,
  NCG_TERMINAL_NEMIROVSKY_STOP = 2,
  NCG_TERMINAL_BREAKDOWN_DETECTED = 3,
} NcgTerminal;

typedef struct NcgNoise NcgNoise;

typedef struct NcgProblem NcgProblem;

typedef struct NcgTrace NcgTrace;

typedef struct NcgRecord {
  size_t k;
  double f_true;
  double f_gap;
  double f_scaled;
  double residual_norm;
  double arg_error;
  double step_alpha;
  double noisy_residual_norm;
} NcgRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL terminated,
// truncated to `len`). Returns the full message length without the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ncg_last_error_message(char *buf, size_t len);

// Fills `out[0..n]` with a geometric spectrum from `lambda_max` down to
// `lambda_max / condition`.
//
// # Safety
// `out` must point to `n` writable doubles.
enum NcgStatus ncg_make_spectrum(size_t n, double lambda_max, double condition, double *out);

// Diagonal problem `A = diag(eig)` with minimizer `x_star` and `x0 = 0`.
//
// # Safety
// `eig` and `x_star` must point to `n` doubles; `out` must be writable.
enum NcgStatus ncg_problem_new_diagonal(const double *eig,
                                        const double *x_star,
                                        size_t n,
                                        struct NcgProblem **out);

// Dense symmetric problem from a row-major `n × n` matrix.
//
// # Safety
// `a` must point to `n * n` doubles, `x_star` to `n`; `out` must be writable.
enum NcgStatus ncg_problem_new_dense(const double *a,
                                     const double *x_star,
                                     size_t n,
                                     struct NcgProblem **out);

// Diagonal problem whose minimizer is `r` times a seeded random unit vector.
//
// # Safety
// `eig` must point to `n` doubles; `out` must be writable.
enum NcgStatus ncg_problem_new_random(const double *eig,
                                      size_t n,
                                      double r,
                                      uint64_t seed,
                                      struct NcgProblem **out);

// # Safety
// `p` must be null or a handle from `ncg_problem_new_*` not freed before.
void ncg_problem_free(struct NcgProblem *p);

// # Safety
// `p` must be a live problem handle and `out` writable.
enum NcgStatus ncg_problem_dim(const struct NcgProblem *p, size_t *out);

// # Safety
// `p` must be a live problem handle and `out` writable.
enum NcgStatus ncg_problem_f_star(const struct NcgProblem *p, double *out);

// # Safety
// `out` must be writable.
enum NcgStatus ncg_noise_new(enum NcgNoiseKind kind,
                             double delta_a,
                             double delta_b,
                             uint64_t seed,
                             struct NcgNoise **out);

// # Safety
// `m` must be null or a handle from `ncg_noise_new` not freed before.
void ncg_noise_free(struct NcgNoise *m);

// Runs CG for at most `max_iter` iterations. `eps` is only read for
// `NCG_STOP_KIND_GRAD_NORM`.
//
// # Safety
// `p` and `m` must be live handles; `out` must be writable.
enum NcgStatus ncg_cg_solve(const struct NcgProblem *p,
                            const struct NcgNoise *m,
                            enum NcgStopKind stop,
                            double eps,
                            size_t max_iter,
                            struct NcgTrace **out);

// # Safety
// `p` and `m` must be live handles; `out` must be writable.
enum NcgStatus ncg_nesterov_solve(const struct NcgProblem *p,
                                  const struct NcgNoise *m,
                                  size_t max_iter,
                                  struct NcgTrace **out);

// Number of records, including the starting point.
//
// # Safety
// `t` must be a live trace handle and `out` writable.
enum NcgStatus ncg_trace_len(const struct NcgTrace *t, size_t *out);

// # Safety
// `t` must be a live trace handle and `out` writable.
enum NcgStatus ncg_trace_status(const struct NcgTrace *t, enum NcgTerminal *out);

// # Safety
// `t` must be a live trace handle and `out` writable.
enum NcgStatus ncg_trace_record(const struct NcgTrace *t, size_t index, struct NcgRecord *out);

// Copies the final iterate into `out[0..len]`; `len` must equal the problem dimension.
//
// # Safety
// `t` must be a live trace handle and `out` must point to `len` writable doubles.
enum NcgStatus ncg_trace_final_x(const struct NcgTrace *t, double *out, size_t len);

// # Safety
// `t` must be null or a handle from a solve call not freed before.
void ncg_trace_free(struct NcgTrace *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOISY_CG_H */
