#ifndef POLAREC_H
#define POLAREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PolarecStatus {
  POLAREC_STATUS_OK = 0,
  POLAREC_STATUS_NULL_POINTER = 1,
  POLAREC_STATUS_INVALID_UTF8 = 2,
  POLAREC_STATUS_DOMAIN = 3,
  POLAREC_STATUS_UNSUPPORTED_MEDIUM = 4,
  POLAREC_STATUS_FRAME_DEGENERATE = 5,
  POLAREC_STATUS_GEOMETRY = 6,
  POLAREC_STATUS_DEGENERATE_NORMAL = 7,
  POLAREC_STATUS_NUMERIC = 8,
  POLAREC_STATUS_UNCONSTRAINED = 9,
  POLAREC_STATUS_INCONSISTENT = 10,
  POLAREC_STATUS_INDEX = 11,
  POLAREC_STATUS_FORMAT = 12,
  POLAREC_STATUS_SCHEMA = 13,
  POLAREC_STATUS_NO_SIGNAL = 14,
  POLAREC_STATUS_IO = 15,
  POLAREC_STATUS_BUFFER_TOO_SMALL = 16,
  POLAREC_STATUS_PANIC = 17,
} PolarecStatus;

// Rendered views with their polarizer-filtered observations.
typedef struct PolarecDataset PolarecDataset;

// Per-pixel RGB Stokes image.
typedef struct PolarecImage PolarecImage;

// Scene description loaded from a TOML file.
typedef struct PolarecScene PolarecScene;

typedef struct PolarecSolution PolarecSolution;

typedef struct PolarecPolarization {
  double unpolarized_intensity;
  double dop;
  double aop;
} PolarecPolarization;

typedef struct PolarecFresnel {
  double r_s;
  double r_p;
  double t_s;
  double t_p;
  double dop_reflection;
  double dop_transmission;
} PolarecFresnel;

typedef struct PolarecSolveOptions {
  uintptr_t max_points;
  uint64_t seed;
  bool known_geometry;
} PolarecSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length in bytes,
// or 0 when there is no error.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
uintptr_t polarec_last_error_message(char *buf, uintptr_t len);

// Intensity behind a linear polarizer at `pol_angle` radians.
//
// # Safety
// `out` must be valid for writing.
enum PolarecStatus polarec_filter_intensity(double s0,
                                            double s1,
                                            double s2,
                                            double pol_angle,
                                            double *out);

// # Safety
// `out` must be valid for writing.
enum PolarecStatus polarec_polarization_info(double s0,
                                             double s1,
                                             double s2,
                                             struct PolarecPolarization *out);

// Stokes vector from intensities at 0°, 45°, 90° and 135°. `out` receives
// `s0, s1, s2`.
//
// # Safety
// `out` must be valid for writing three values.
enum PolarecStatus polarec_stokes_from_quad(double i0,
                                            double i45,
                                            double i90,
                                            double i135,
                                            double *out);

// # Safety
// `out` must be valid for writing.
enum PolarecStatus polarec_fresnel(double cos_theta_i, double eta, struct PolarecFresnel *out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writing.
enum PolarecStatus polarec_scene_load(const char *path, struct PolarecScene **out);

// # Safety
// `scene` must be null or a handle from [`polarec_scene_load`] not yet freed.
void polarec_scene_free(struct PolarecScene *scene);

// # Safety
// `scene` must be a live scene handle.
uintptr_t polarec_scene_camera_count(const struct PolarecScene *scene);

// Renders camera `view`. `volume` selects volume rendering, seeded by `seed`;
// otherwise the surface is sphere traced.
//
// # Safety
// `scene` must be a live scene handle; `out` must be valid for writing.
enum PolarecStatus polarec_render(const struct PolarecScene *scene,
                                  uintptr_t view,
                                  bool volume,
                                  uint64_t seed,
                                  struct PolarecImage **out);

// Reads an SVIM Stokes image from disk.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writing.
enum PolarecStatus polarec_image_load(const char *path, struct PolarecImage **out);

// # Safety
// `image` must be null or a live image handle.
void polarec_image_free(struct PolarecImage *image);

// # Safety
// `image` must be a live image handle; `width`/`height` valid for writing.
enum PolarecStatus polarec_image_size(const struct PolarecImage *image,
                                      uintptr_t *width,
                                      uintptr_t *height);

// Writes `s0, s1, s2` per channel per pixel (`width·height·9` values, row
// major, RGB order).
//
// # Safety
// `image` must be a live image handle; `buf` valid for `len` values.
enum PolarecStatus polarec_image_stokes(const struct PolarecImage *image,
                                        double *buf,
                                        uintptr_t len);

// Writes the RGB intensity seen through a polarizer at `pol_angle` radians
// (`width·height·3` values).
//
// # Safety
// `image` must be a live image handle; `buf` valid for `len` values.
enum PolarecStatus polarec_image_filter(const struct PolarecImage *image,
                                        double pol_angle,
                                        double *buf,
                                        uintptr_t len);

// Loads a dataset from a `manifest.txt` written by `polarec render`.
//
// # Safety
// `manifest` must be a NUL-terminated string; `out` valid for writing.
enum PolarecStatus polarec_dataset_load(const char *manifest, struct PolarecDataset **out);

// # Safety
// `dataset` must be null or a live dataset handle.
void polarec_dataset_free(struct PolarecDataset *dataset);

struct PolarecSolveOptions polarec_solve_options_default(void);

// Recovers the polarizer angle and per-point surface parameters.
//
// # Safety
// `dataset` must be a live dataset handle; `options` null (defaults) or
// valid; `out` valid for writing.
enum PolarecStatus polarec_solve(const struct PolarecDataset *dataset,
                                 const struct PolarecSolveOptions *options,
                                 struct PolarecSolution **out);

// # Safety
// `solution` must be null or a live solution handle.
void polarec_solution_free(struct PolarecSolution *solution);

// Recovered polarizer angle in radians, `[0, π)`. NaN for a null handle.
//
// # Safety
// `solution` must be null or a live solution handle.
double polarec_solution_pol_angle(const struct PolarecSolution *solution);

// # Safety
// `solution` must be null or a live solution handle.
double polarec_solution_loss(const struct PolarecSolution *solution);

// False when the observations carry no polarization, so any angle fits.
//
// # Safety
// `solution` must be null or a live solution handle.
bool polarec_solution_identifiable(const struct PolarecSolution *solution);

// # Safety
// `solution` must be null or a live solution handle.
uintptr_t polarec_solution_point_count(const struct PolarecSolution *solution);

// Writes the unit normal of point `index` into `out[0..3]`.
//
// # Safety
// `solution` must be a live solution handle; `out` valid for three values.
enum PolarecStatus polarec_solution_normal(const struct PolarecSolution *solution,
                                           uintptr_t index,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLAREC_H */
