/** Typed client for the rating service HTTP/JSON API. */

export interface Scale {
  min: number;
  max: number;
  min_label: string;
  max_label: string;
}

export interface SessionPayload {
  participant: string;
  samples: string[];
  rated: string[];
  scale: Scale;
}

export interface SystemResult {
  n: number;
  mean: number;
  std_dev: number;
}

export interface ResultsPayload {
  count: number;
  systems: Record<string, SystemResult>;
  cohens_d: number | null;
  effect_band: string | null;
}

export interface RatingOutcome {
  status: number;
  ok: boolean;
  duplicate: boolean;
  error?: string;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  async session(participant?: string): Promise<SessionPayload> {
    const query = participant ? `?participant=${encodeURIComponent(participant)}` : "";
    const res = await fetch(`${this.base}/api/session${query}`);
    if (!res.ok) {
      throw new Error(`session request failed: ${res.status}`);
    }
    return (await res.json()) as SessionPayload;
  }

  sampleUrl(sampleId: string): string {
    return `${this.base}/api/sample/${encodeURIComponent(sampleId)}`;
  }

  async submitRating(participant: string, sample: string, score: number): Promise<RatingOutcome> {
    const res = await fetch(`${this.base}/api/rating`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ participant, sample, score }),
    });
    let error: string | undefined;
    if (!res.ok) {
      try {
        error = ((await res.json()) as { error?: string }).error;
      } catch {
        error = res.statusText;
      }
    }
    return { status: res.status, ok: res.ok, duplicate: res.status === 409, error };
  }

  async submitMetadata(participant: string, details: Record<string, string>): Promise<boolean> {
    const res = await fetch(`${this.base}/api/metadata`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ participant, details }),
    });
    return res.ok;
  }

  async results(): Promise<ResultsPayload> {
    const res = await fetch(`${this.base}/api/results`);
    if (!res.ok) {
      throw new Error(`results request failed: ${res.status}`);
    }
    return (await res.json()) as ResultsPayload;
  }
}
