#ifndef FDS_FDS_H
#define FDS_FDS_H

#include <stddef.h>
#include <stdint.h>

#if defined(FDS_BUILDING_LIBRARY)
#define FDS_API __attribute__((visibility("default")))
#else
#define FDS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns one of these; on failure fds_last_error() describes it. */
typedef enum fds_status {
  FDS_OK = 0,
  FDS_ERR_USAGE = 1,   /* bad argument, flag or configuration */
  FDS_ERR_DATA = 2,    /* unreadable, malformed or inconsistent input */
  FDS_ERR_NUMERIC = 3, /* non-finite loss or gradient, failed numeric check */
  FDS_ERR_INTERNAL = 4
} fds_status;

FDS_API const char* fds_version(void);
/* Message of the last failed call on the calling thread; "" if none. */
FDS_API const char* fds_last_error(void);
/* Releases strings returned through char** out-parameters. */
FDS_API void fds_string_free(char* s);

/* threads == 0 selects the number of available cores. Results never depend
   on the thread count. JSON arguments may be NULL for defaults. */

/* Synthetic event directory: chips/, footprints.geojson, points.csv,
   truth.geojson, event.json. config_json holds synth settings (size, pixel,
   vhr_fraction, ...). */
FDS_API fds_status fds_synth(const char* out_dir, uint64_t seed, size_t chips, const char* config_json);

/* Claim-based labels: join, nearest rule, kNN imputation and binning.
   config_json keys: k, d, k_min, d_max, classes. Writes assignments.geojson
   and bins.json to out_dir; summary_json (optional) receives counts. */
FDS_API fds_status fds_impute(const char* footprints, const char* points_csv, const char* config_json,
                              const char* out_dir, char** summary_json);

/* Trains on an event directory. config_json is a run configuration with
   "train", "data" and "eval" sections. labels (optional) is a GeoJSON with
   id and damage_class that replaces the event's truth. */
FDS_API fds_status fds_train(const char* event_dir, const char* config_json, const char* labels,
                             const char* out_dir, char** summary_json);

typedef struct fds_run fds_run;

FDS_API fds_status fds_run_load(const char* run_dir, fds_run** out);
FDS_API void fds_run_free(fds_run* run);
/* Metrics report for split "train", "val", "test" or "all". */
FDS_API fds_status fds_run_evaluate(const fds_run* run, const char* event_dir, const char* labels, const char* split,
                                    unsigned threads, char** report_json);
/* Per-chip class rasters for every task head of the run. */
FDS_API fds_status fds_run_predict(const fds_run* run, const char* event_dir, const char* out_dir, unsigned threads);
/* One tile of raw (unnormalized) channel-planar inputs: pre_sar and post_sar
   4 x h x w, vhr 3 x h x w or NULL when absent, risk h x w levels 0..4 (255
   no-data). Writes h x w argmax classes into each non-NULL output; an output
   whose head the run lacks is filled with 255. */
FDS_API fds_status fds_run_predict_tile(const fds_run* run, size_t height, size_t width, const float* pre_sar,
                                        const float* post_sar, const float* vhr, const uint8_t* risk, uint8_t* bda,
                                        uint8_t* fm, uint8_t* loc);

/* Building records from predicted BDA rasters (an fds_run_predict output
   directory). stat: "median", "mean", "mode" or "max". A building is flagged
   low_coverage below min_pixels and high_disagreement above var_threshold. */
FDS_API fds_status fds_aggregate(const char* pred_dir, const char* footprints, const char* stat, size_t min_pixels,
                                 double var_threshold, unsigned threads, const char* out_geojson);
/* In-memory variant for one north-up raster; writes an unstyled
   FeatureCollection to geojson_out. */
FDS_API fds_status fds_aggregate_raster(const uint8_t* labels, size_t width, size_t height, double origin_x,
                                        double origin_y, double pixel, const char* footprints_geojson,
                                        const char* stat, char** geojson_out);
/* Styled, id-ordered damage map from fds_aggregate output. */
FDS_API fds_status fds_export(const char* records, const char* footprints, int style, const char* out_geojson);

/* Built-in invariant suite. *passed is 1 when every check holds. */
FDS_API fds_status fds_selftest(int* passed, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
