#ifndef MIRA_H
#define MIRA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum MiraStatus {
  MIRA_STATUS_OK = 0,
  MIRA_STATUS_NULL_POINTER = 1,
  MIRA_STATUS_INVALID_UTF8 = 2,
  MIRA_STATUS_INVALID_ARGUMENT = 3,
  MIRA_STATUS_BACKEND_FAILURE = 4,
  MIRA_STATUS_INVALID_DATA = 5,
  MIRA_STATUS_IO = 6,
  MIRA_STATUS_NOT_FOUND = 7,
  MIRA_STATUS_PANIC = 8,
} MiraStatus;

typedef enum MiraTermination {
  MIRA_TERMINATION_STOPPED = 0,
  MIRA_TERMINATION_BUDGET_EXHAUSTED = 1,
  MIRA_TERMINATION_BACKEND_ERROR = 2,
} MiraTermination;

// A finished episode with its image payloads.
typedef struct MiraEpisode MiraEpisode;

// Backend clients plus loop settings.
typedef struct MiraRuntime MiraRuntime;

// An append-only trajectory store.
typedef struct MiraStore MiraStore;

typedef struct MiraScores {
  double sc;
  double pq;
  double overall;
} MiraScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *mira_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void mira_string_free(char *s);

// Creates a runtime backed by the in-process grid mocks. A negative
// `fault_rate` disables editor faults.
//
// # Safety
// `out` must point to writable storage for one handle.
enum MiraStatus mira_runtime_new_mock(size_t max_steps,
                                      double fault_rate,
                                      uint64_t seed,
                                      struct MiraRuntime **out);

// Creates a runtime that talks to remote backends. `terminator_url` may be
// NULL, in which case only a policy stop ends an episode early.
//
// # Safety
// URL arguments must be NULL-terminated strings; `out` must be writable.
enum MiraStatus mira_runtime_new_remote(const char *policy_url,
                                        const char *editor_url,
                                        const char *terminator_url,
                                        double timeout_secs,
                                        size_t max_steps,
                                        struct MiraRuntime **out);

// # Safety
// `rt` must be NULL or a handle from a `mira_runtime_new_*` call.
void mira_runtime_free(struct MiraRuntime *rt);

// Runs one episode. A backend failure during the loop still yields an
// episode, terminated with `BackendError`.
//
// # Safety
// `image` must point to `image_len` readable bytes; string arguments must
// be NULL-terminated; `out` must be writable.
enum MiraStatus mira_runtime_run(const struct MiraRuntime *rt,
                                 const uint8_t *image,
                                 size_t image_len,
                                 const char *instruction,
                                 const char *episode_id,
                                 struct MiraEpisode **out);

// # Safety
// `ep` must be NULL or a handle from [`mira_runtime_run`].
void mira_episode_free(struct MiraEpisode *ep);

// # Safety
// `ep` must be a live episode handle and `out` writable.
enum MiraStatus mira_episode_termination(const struct MiraEpisode *ep, enum MiraTermination *out);

// Number of steps, the stop step included; 0 for a NULL handle.
//
// # Safety
// `ep` must be NULL or a live episode handle.
size_t mira_episode_step_count(const struct MiraEpisode *ep);

// # Safety
// `ep` must be NULL or a live episode handle.
size_t mira_episode_edit_count(const struct MiraEpisode *ep);

// Instruction text of the step at 0-based `index`, or NULL.
//
// # Safety
// `ep` must be a live episode handle.
char *mira_episode_step_instruction(const struct MiraEpisode *ep, size_t index);

// Borrows the final image payload. The bytes live as long as the episode.
//
// # Safety
// `ep` must be a live episode handle; both out pointers must be writable.
enum MiraStatus mira_episode_final_image(const struct MiraEpisode *ep,
                                         const uint8_t **data,
                                         size_t *len);

// Sum of policy and editor latency in seconds.
//
// # Safety
// `ep` must be a live episode handle and `out` writable.
enum MiraStatus mira_episode_total_latency(const struct MiraEpisode *ep, double *out);

// The trajectory as a JSON document.
//
// # Safety
// `ep` must be a live episode handle.
char *mira_episode_to_json(const struct MiraEpisode *ep);

// Opens or creates a store log at `path`; payloads go to a sibling
// `blobs/` directory.
//
// # Safety
// `path` must be a NULL-terminated string and `out` writable.
enum MiraStatus mira_store_open(const char *path, struct MiraStore **out);

// # Safety
// `store` must be NULL or a handle from [`mira_store_open`].
void mira_store_free(struct MiraStore *store);

// Appends a terminated episode and its payloads.
//
// # Safety
// Both handles must be live.
enum MiraStatus mira_store_write(const struct MiraStore *store, const struct MiraEpisode *ep);

// # Safety
// `store` must be NULL or a live store handle.
size_t mira_store_len(const struct MiraStore *store);

// The stored trajectory with `episode_id` as JSON, or NULL.
//
// # Safety
// `store` must be a live store handle; `episode_id` NULL-terminated.
char *mira_store_read_json(const struct MiraStore *store, const char *episode_id);

// Scores an edit of symbol grid `source` into `edited` (both in `RRW/WWK`
// form) against `instruction` with the reference grid scorer.
//
// # Safety
// String arguments must be NULL-terminated and `out` writable.
enum MiraStatus mira_score_grid(const char *source,
                                const char *edited,
                                const char *instruction,
                                struct MiraScores *out);

// Validates a JSON document against a named schema such as
// `mira-trajectory/1`. Writes the number of violations to `violations`;
// the first one is also the last error.
//
// # Safety
// String arguments must be NULL-terminated and `violations` writable.
enum MiraStatus mira_validate_json(const char *schema, const char *json, size_t *violations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIRA_H */
