/** Wire types of the inference service plus the client-side view model. */

export interface PredictionEntry {
  code: string;
  name: string;
  probability: number;
}

/** Body of POST /v1/predict. */
export interface ApiPrediction {
  predictions: PredictionEntry[];
  top3: PredictionEntry[];
  model: string;
  input_checksum?: string;
}

/** Body of GET /v1/model. */
export interface ModelInfo {
  classes: { code: string; name: string }[];
  input_size: number;
  weight_file_checksum: string;
  model?: string;
}

/** Error body: { error, code } with a 4xx/5xx status. */
export interface ServiceErrorBody {
  error: string;
  code: string;
}

/**
 * The service response as received (probabilities are never re-normalized
 * or re-ordered) plus client-side presentation fields.
 */
export interface UiPrediction extends ApiPrediction {
  fileName: string;
  previewUrl: string;
  latencyMs: number;
}
