#ifndef AFM_H
#define AFM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every fallible function returns one; AFM_OK is zero. */
#define AFM_OK 0
#define AFM_ERR_NULL 1
#define AFM_ERR_INVALID_ARGUMENT 2
#define AFM_ERR_IO 3
#define AFM_ERR_PARSE 4
#define AFM_ERR_EMPTY_SKETCH 5
#define AFM_ERR_UNKNOWN_METHOD 6
#define AFM_ERR_OUT_OF_RANGE 7
#define AFM_ERR_INTERNAL 8
#define AFM_ERR_PANIC 9
#define AFM_ERR_EMPTY_INDEX 10

/* Opaque handles; release each with its *_free function. */
typedef struct AfmSpectra AfmSpectra;
typedef struct AfmIndex AfmIndex;
typedef struct AfmResults AfmResults;

/* One sketch point in canvas pixels: position, orientation (radians) and
 * strength in [0, 1]. Points weaker than 0.2 are dropped. */
typedef struct AfmPoint {
    double x;
    double y;
    double phi;
    double w;
} AfmPoint;

/* Pipeline settings. NULL method strings and zero counts take defaults.
 * rank:   "full", "proj" or "proj-disc"
 * rerank: "xy", "xy-star", "x-over-y" or "none" */
typedef struct AfmQueryOptions {
    const char *rank;
    const char *rerank;
    size_t shortlist;
    size_t nbhd;
    size_t pre_factor;
    size_t qe_top_n;
    size_t k;
} AfmQueryOptions;

/* One hit. The box is the query's bounding box on the 400 px reference
 * canvas of the matched image. */
typedef struct AfmHit {
    double score;
    double scale;
    int32_t mirror;
    int32_t dx;
    int32_t dy;
    double box_x;
    double box_y;
    double box_w;
    double box_h;
} AfmHit;

/* Message of the last failed call on this thread (empty after success);
 * valid until the next call on the same thread. */
const char *afm_last_error(void);
const char *afm_version(void);

int32_t afm_spectra_default(AfmSpectra **out);
int32_t afm_spectra_load(const char *path, AfmSpectra **out);
void afm_spectra_free(AfmSpectra *spectra);

/* spectra and aux_path may be NULL (bundled spectra, no query expansion). */
int32_t afm_index_load(const char *path, const AfmSpectra *spectra,
                       const char *aux_path, AfmIndex **out);
int32_t afm_index_len(const AfmIndex *index, size_t *out);
void afm_index_free(AfmIndex *index);

int32_t afm_query_options_default(AfmQueryOptions *out);
/* options may be NULL for the defaults. */
int32_t afm_query_points(const AfmIndex *index, const AfmPoint *points,
                         size_t n_points, uint32_t width, uint32_t height,
                         const AfmQueryOptions *options, AfmResults **out);

int32_t afm_results_len(const AfmResults *results, size_t *out);
/* Either out-pointer may be NULL; *id lives as long as results. */
int32_t afm_results_get(const AfmResults *results, size_t i, AfmHit *hit,
                        const char **id);
void afm_results_free(AfmResults *results);

#ifdef __cplusplus
}
#endif

#endif /* AFM_H */
