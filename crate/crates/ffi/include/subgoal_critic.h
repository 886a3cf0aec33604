#ifndef SUBGOAL_CRITIC_H
#define SUBGOAL_CRITIC_H

#include <stdbool.h>
#include <stdint.h>

/**
 * Subgoal event codes written by [`sgc_env_step`].
 */
#define SGC_EVENT_NONE 0

#define SGC_EVENT_KEY_PICKED_UP 1

#define SGC_EVENT_DOOR_UNLOCKED 2

/**
 * View codes accepted by [`sgc_env_render`].
 */
#define SGC_VIEW_CROPPED 0

#define SGC_VIEW_GAMESCREEN 1

typedef enum SgcStatus {
  SGC_STATUS_OK = 0,
  SGC_STATUS_NULL_POINTER = 1,
  SGC_STATUS_INVALID_UTF8 = 2,
  SGC_STATUS_INVALID_ARGUMENT = 3,
  SGC_STATUS_LAYOUT_FAILED = 4,
  SGC_STATUS_EPISODE_OVER = 5,
  SGC_STATUS_NO_TRANSITION = 6,
  SGC_STATUS_PANIC = 99,
} SgcStatus;

/**
 * Opaque episode handle.
 */
typedef struct SgcEnv SgcEnv;

typedef struct SgcStepResult {
  int32_t event;
  uint8_t task_reward;
  bool done;
} SgcStepResult;

typedef struct SgcMetrics {
  double f1;
  double accuracy;
  double precision;
  double recall;
} SgcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the last failing call on this thread, or null. The pointer
 * stays valid until the next call on this thread; do not free it.
 */
const char *sgc_last_error(void);

/**
 * Library version as a static string.
 */
const char *sgc_version(void);

/**
 * Creates an episode on the layout generated from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SgcStatus sgc_env_new(uint64_t seed, struct SgcEnv **out);

/**
 * Releases a handle from [`sgc_env_new`]. Null is ignored.
 *
 * # Safety
 * `env` must come from [`sgc_env_new`] and not be used afterwards.
 */
void sgc_env_free(struct SgcEnv *env);

/**
 * Restarts the episode on the same layout.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum SgcStatus sgc_env_reset(struct SgcEnv *env);

/**
 * Applies action `action` (0 north, 1 east, 2 south, 3 west, 4 pickup,
 * 5 apply).
 *
 * # Safety
 * `env` must be a live handle; `out` may be null.
 */
enum SgcStatus sgc_env_step(struct SgcEnv *env, uint8_t action, struct SgcStepResult *out);

/**
 * Renders the current state as text.
 *
 * # Safety
 * `env` must be a live handle and `out` writable; free the result with
 * [`sgc_string_free`].
 */
enum SgcStatus sgc_env_render(const struct SgcEnv *env, uint32_t view, bool separator, char **out);

/**
 * Composes the prompt for the most recent step under a named
 * configuration such as `gamescreen-provided`.
 *
 * # Safety
 * `env` must be a live handle, `config_name` a C string and `out`
 * writable; free the result with [`sgc_string_free`].
 */
enum SgcStatus sgc_env_prompt(const struct SgcEnv *env, const char *config_name, char **out);

/**
 * Parses an annotator response into JSON:
 * `{"status": "ok"|"partially_parsed"|"unparseable", "flags": {...}, "matched": {...}}`.
 *
 * # Safety
 * `text` must be a C string and `out` writable; free the result with
 * [`sgc_string_free`].
 */
enum SgcStatus sgc_parse_response(const char *text, char **out);

/**
 * F1, accuracy, precision and recall from confusion counts.
 *
 * # Safety
 * `out` must be writable.
 */
enum SgcStatus sgc_metrics_derive(uint64_t tp,
                                  uint64_t tn,
                                  uint64_t fp,
                                  uint64_t fn_,
                                  struct SgcMetrics *out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sgc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBGOAL_CRITIC_H */
