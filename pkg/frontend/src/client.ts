/** Typed client for the editing service; every response passes through zod
 * before the UI sees it. */

import {
  EditRequest,
  EditResponse,
  EditResponseSchema,
  ErrorResponseSchema,
  ModelInfo,
  ModelInfoSchema,
} from "./schema.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly id: string | null = null,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn = (i, init) => fetch(i, init),
  ) {}

  async modelInfo(): Promise<ModelInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/model/info`);
    if (!res.ok) throw await this.toError(res);
    return ModelInfoSchema.parse(await res.json());
  }

  async edit(req: EditRequest, signal?: AbortSignal): Promise<EditResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/edit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
    if (!res.ok) throw await this.toError(res);
    return EditResponseSchema.parse(await res.json());
  }

  private async toError(res: Response): Promise<HttpError> {
    try {
      const body = ErrorResponseSchema.parse(await res.json());
      return new HttpError(res.status, body.error, body.id ?? null);
    } catch {
      return new HttpError(res.status, `HTTP ${res.status}`);
    }
  }
}
