/**
 * Typed client for the vetting service HTTP API.
 *
 * Decisions carry the version of the record the reviewer was looking at;
 * the service answers 409 when that version is stale. The client turns
 * that into a VersionConflictError holding the current version so the UI
 * can offer a reload instead of overwriting someone else's review.
 */

export type TextLabel = "Overlaying" | "Organic" | "Both" | "None";
export type RecordStatus = "pending" | "ambiguous" | "resolved";
export type DecisionAction = "accept" | "relabel" | "reject_for_reannotation";

export interface AggregatedLabel {
  image_id: string;
  label: TextLabel | null;
  votes_for_winner: number;
  total_votes: number;
  ambiguous: boolean;
  source?: string;
}

export interface ExampleRecord {
  image_id: string;
  image_path: string;
  category: string;
  status: RecordStatus;
  version: number;
  aggregated?: AggregatedLabel;
  binary_class?: string;
  gate_score?: number;
  n_text_regions?: number;
  split?: string;
}

export interface Vote {
  worker_id: string;
  label: TextLabel;
  vote_time_s: number;
  batch: number;
}

/** Candidate text region as [x0, y0, x1, y1] in image pixels. */
export type Box = [number, number, number, number];

export interface ExampleDetail extends ExampleRecord {
  boxes: Box[];
  votes: Vote[];
}

export interface QueuePage {
  total: number;
  page: number;
  page_size: number;
  items: ExampleRecord[];
}

export interface DecisionRequest {
  action: DecisionAction;
  prior_version: number;
  label?: TextLabel;
  reviewer?: string;
}

export class VersionConflictError extends Error {
  readonly currentVersion: number;

  constructor(message: string, currentVersion: number) {
    super(message);
    this.name = "VersionConflictError";
    this.currentVersion = currentVersion;
  }
}

export class ApiError extends Error {
  readonly status: number;

  constructor(message: string, status: number) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

export interface ApiClient {
  listExamples(status?: RecordStatus, page?: number, pageSize?: number): Promise<QueuePage>;
  getExample(imageId: string): Promise<ExampleDetail>;
  imageUrl(imageId: string, withBoxes: boolean): string;
  postDecision(imageId: string, body: DecisionRequest): Promise<ExampleRecord>;
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const payload = await response.json();
    const detail = payload?.detail;
    if (typeof detail === "string") return detail;
    if (detail?.message) return String(detail.message);
    return JSON.stringify(detail ?? payload);
  } catch {
    return `${response.status} ${response.statusText}`;
  }
}

export class HttpApiClient implements ApiClient {
  private readonly base: string;

  constructor(baseUrl: string) {
    this.base = baseUrl.replace(/\/$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(`${this.base}${path}`, init);
    if (response.status === 409) {
      const payload = await response.json();
      throw new VersionConflictError(
        String(payload?.detail?.message ?? "stale version"),
        Number(payload?.detail?.current_version),
      );
    }
    if (!response.ok) {
      throw new ApiError(await errorMessage(response), response.status);
    }
    return (await response.json()) as T;
  }

  listExamples(status?: RecordStatus, page = 1, pageSize = 50): Promise<QueuePage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (status) params.set("status", status);
    return this.request<QueuePage>(`/api/examples?${params}`);
  }

  getExample(imageId: string): Promise<ExampleDetail> {
    return this.request<ExampleDetail>(`/api/examples/${encodeURIComponent(imageId)}`);
  }

  imageUrl(imageId: string, withBoxes: boolean): string {
    const suffix = withBoxes ? "?boxes=1" : "";
    return `${this.base}/api/examples/${encodeURIComponent(imageId)}/image${suffix}`;
  }

  postDecision(imageId: string, body: DecisionRequest): Promise<ExampleRecord> {
    return this.request<ExampleRecord>(
      `/api/examples/${encodeURIComponent(imageId)}/decision`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
  }
}
