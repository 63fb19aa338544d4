/** Single-page app state machine: idle -> uploading -> result | error.
 *
 * One prediction is in flight at a time. A new upload bumps the request
 * token; completions carrying a stale token are dropped, which (together
 * with aborting the old fetch) implements cancel-on-new-upload.
 */

import type { UiPrediction } from "./types.js";

export type Phase = "idle" | "uploading" | "result" | "error";

export interface UploadError {
  message: string;
  retryable: boolean;
}

export interface AppState {
  phase: Phase;
  prediction: UiPrediction | null;
  error: UploadError | null;
  /** Token of the newest upload; stale completions are ignored. */
  requestToken: number;
  uploadingFileName: string | null;
}

export function initialState(): AppState {
  return {
    phase: "idle",
    prediction: null,
    error: null,
    requestToken: 0,
    uploadingFileName: null,
  };
}

export function startUpload(state: AppState, fileName: string): AppState {
  return {
    ...state,
    phase: "uploading",
    error: null,
    requestToken: state.requestToken + 1,
    uploadingFileName: fileName,
  };
}

export function uploadSucceeded(
  state: AppState,
  token: number,
  prediction: UiPrediction,
): AppState {
  if (token !== state.requestToken) return state; // cancelled by a newer upload
  return {
    ...state,
    phase: "result",
    prediction,
    error: null,
    uploadingFileName: null,
  };
}

export function uploadFailed(state: AppState, token: number, error: UploadError): AppState {
  if (token !== state.requestToken) return state;
  return { ...state, phase: "error", error, uploadingFileName: null };
}

export function reset(state: AppState): AppState {
  return { ...initialState(), requestToken: state.requestToken };
}
