/** DOM wiring for the single-page UI. All presentation logic lives in the
 * pure modules (api/state/render); this file only connects events.
 */

import { ApiError, fetchModelInfo, isRetryable, predictImage } from "./api.js";
import {
  AppState,
  initialState,
  startUpload,
  uploadFailed,
  uploadSucceeded,
} from "./state.js";
import {
  renderErrorBanner,
  renderIdle,
  renderModelInfo,
  renderOfflineBanner,
  renderResult,
  renderUploading,
} from "./render.js";
import type { UiPrediction } from "./types.js";

let state: AppState = initialState();
let controller: AbortController | null = null;
let lastFile: File | null = null;
let previewUrl = "";

const resultPane = document.getElementById("result-pane") as HTMLElement;
const modelPane = document.getElementById("model-pane") as HTMLElement;
const preview = document.getElementById("preview") as HTMLImageElement;
const fileInput = document.getElementById("file-input") as HTMLInputElement;

function render(): void {
  switch (state.phase) {
    case "idle":
      resultPane.innerHTML = renderIdle();
      break;
    case "uploading":
      resultPane.innerHTML = renderUploading(state.uploadingFileName ?? "image");
      break;
    case "result":
      resultPane.innerHTML = renderResult(state.prediction as UiPrediction);
      break;
    case "error": {
      const err = state.error ?? { message: "unknown error", retryable: false };
      resultPane.innerHTML = renderErrorBanner(err.message, err.retryable);
      break;
    }
  }
}

async function upload(file: File): Promise<void> {
  lastFile = file;
  controller?.abort(); // one in-flight request: a new upload cancels the old
  controller = new AbortController();

  if (previewUrl) URL.revokeObjectURL(previewUrl);
  previewUrl = URL.createObjectURL(file);
  preview.src = previewUrl;
  preview.hidden = false;

  state = startUpload(state, file.name);
  const token = state.requestToken;
  render();

  const started = performance.now();
  try {
    const response = await predictImage(file, file.type || "image/png", {
      signal: controller.signal,
    });
    const prediction: UiPrediction = {
      ...response,
      fileName: file.name,
      previewUrl,
      latencyMs: performance.now() - started,
    };
    state = uploadSucceeded(state, token, prediction);
  } catch (err) {
    if (err instanceof DOMException && err.name === "AbortError") return;
    const message = err instanceof ApiError ? err.message : "network failure";
    state = uploadFailed(state, token, { message, retryable: isRetryable(err) });
  }
  render();
}

async function loadModelInfo(): Promise<void> {
  try {
    modelPane.innerHTML = renderModelInfo(await fetchModelInfo());
  } catch {
    modelPane.innerHTML = renderOfflineBanner();
  }
}

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void upload(file);
});

resultPane.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.dataset.action === "retry" && lastFile) void upload(lastFile);
});

render();
void loadModelInfo();
