import { PendingResponse, RatingBody, SessionInfo } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `request failed with status ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep defaults
  }
  return new ApiError(response.status, code, message);
}

export class ReviewApi {
  constructor(private baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async session(): Promise<SessionInfo> {
    const response = await fetch(this.url("/api/session"));
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as SessionInfo;
  }

  async pending(rater: string): Promise<PendingResponse> {
    const response = await fetch(this.url(`/api/explanations?rater=${encodeURIComponent(rater)}`));
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as PendingResponse;
  }

  async submitRating(body: RatingBody): Promise<{ rating_id: string }> {
    const response = await fetch(this.url("/api/ratings"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as { rating_id: string };
  }
}
