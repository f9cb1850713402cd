// Typed client for the inference service. The UI never computes a
// prediction or a canonical value of record itself: every displayed
// number originates from one of these responses.

export interface Measurement {
  name: string;
  value: number;
  unit: string;
}

export interface PredictRequest {
  measurements: Measurement[];
  age: number;
  sex: string;
  model_id?: string;
}

export interface PredictResponse {
  p_bacteria: number;
  label: string;
  band_flag: boolean;
  model_id: string;
}

export interface PhiEntry {
  feature: string;
  feature_value: number;
  phi: number;
}

export interface ExplainResponse {
  phi: PhiEntry[];
  base_value: number;
  prediction: number;
  residual: number;
  p_bacteria: number;
  label: string;
  band_flag: boolean;
  model_id: string;
}

export interface FieldIssue {
  field: string;
  message: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly issues: FieldIssue[],
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async health(): Promise<{ status: string; model_id: string | null }> {
    const res = await this.fetchImpl(`${this.baseUrl}/health`);
    if (!res.ok) throw new ApiError(res.status, [], `health check failed (${res.status})`);
    return res.json();
  }

  async predict(body: PredictRequest): Promise<PredictResponse> {
    return this.post("/predict", body);
  }

  async explain(body: PredictRequest): Promise<ExplainResponse> {
    return this.post("/explain", body);
  }

  private async post<T>(path: string, body: PredictRequest): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      let issues: FieldIssue[] = [];
      let message = `${path} failed (${res.status})`;
      try {
        const payload = await res.json();
        if (Array.isArray(payload.detail)) {
          issues = payload.detail as FieldIssue[];
        } else if (typeof payload.detail === "string") {
          message = payload.detail;
        }
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(res.status, issues, message);
    }
    return res.json();
  }
}
