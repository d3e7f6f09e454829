// Thin typed client for the routing service. The console performs no
// inference of its own: every displayed number originates here.

import type {
  ApiErrorPayload,
  BoundsResponse,
  ConceptEdit,
  CurveResponse,
  ExpertResponse,
  InstanceView,
  InterveneResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly group?: number[],
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const body = await response.json();
  if (!response.ok) {
    const payload = body as ApiErrorPayload;
    throw new ApiError(
      response.status,
      payload.error?.code ?? "unknown",
      payload.error?.message ?? response.statusText,
      payload.error?.group,
    );
  }
  return body as T;
}

export class Client {
  constructor(readonly baseUrl: string) {}

  getInstance(id: number): Promise<InstanceView> {
    return request<InstanceView>(`${this.baseUrl}/instances/${id}`);
  }

  intervene(instanceId: number, edits: ConceptEdit[]): Promise<InterveneResponse> {
    return request<InterveneResponse>(`${this.baseUrl}/intervene`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ instance_id: instanceId, edits }),
    });
  }

  actAsExpert(instanceId: number, label: number): Promise<ExpertResponse> {
    return request<ExpertResponse>(`${this.baseUrl}/expert`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ instance_id: instanceId, label }),
    });
  }

  getCurve(rho: number): Promise<CurveResponse> {
    return request<CurveResponse>(`${this.baseUrl}/curve?rho=${encodeURIComponent(rho)}`);
  }

  getBounds(): Promise<BoundsResponse> {
    return request<BoundsResponse>(`${this.baseUrl}/bounds`);
  }
}
