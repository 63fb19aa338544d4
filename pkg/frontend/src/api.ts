/** REST client for the inference service.
 *
 * The base URL resolves, in order: an explicit argument, the runtime
 * config global `__DERM_CONFIG__.apiBase` (set by an optional config.js),
 * then same-origin relative paths.
 */

import type { ApiPrediction, ModelInfo, ServiceErrorBody } from "./types.js";

declare global {
  // eslint-disable-next-line no-var
  var __DERM_CONFIG__: { apiBase?: string } | undefined;
}

export function apiBase(explicit?: string): string {
  if (explicit !== undefined) return explicit.replace(/\/$/, "");
  const configured = globalThis.__DERM_CONFIG__?.apiBase;
  return (configured ?? "").replace(/\/$/, "");
}

/** A response the service answered with an { error, code } body. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function throwApiError(res: Response): Promise<never> {
  let body: ServiceErrorBody | null = null;
  try {
    body = (await res.json()) as ServiceErrorBody;
  } catch {
    // non-JSON error body; fall through to a generic message
  }
  throw new ApiError(res.status, body?.code ?? "http_error", body?.error ?? `HTTP ${res.status}`);
}

export async function fetchModelInfo(base?: string): Promise<ModelInfo> {
  const res = await fetch(`${apiBase(base)}/v1/model`);
  if (!res.ok) await throwApiError(res);
  return (await res.json()) as ModelInfo;
}

export interface PredictOptions {
  base?: string;
  signal?: AbortSignal;
}

export async function predictImage(
  data: Blob | ArrayBuffer | Uint8Array,
  contentType: string,
  opts: PredictOptions = {},
): Promise<ApiPrediction> {
  const res = await fetch(`${apiBase(opts.base)}/v1/predict`, {
    method: "POST",
    headers: { "Content-Type": contentType },
    body: data as BodyInit,
    signal: opts.signal,
  });
  if (!res.ok) await throwApiError(res);
  return (await res.json()) as ApiPrediction;
}

/** True for failures worth a retry button: network trouble, not a service verdict. */
export function isRetryable(err: unknown): boolean {
  if (err instanceof ApiError) return false;
  if (err instanceof DOMException && err.name === "AbortError") return false;
  return true;
}
