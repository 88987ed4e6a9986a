/** Typed client for the annotation study HTTP API.
 *
 * The server owns all session state; this client never computes the
 * consistency index itself, it only renders server values.
 */

export interface Group {
  group_id: string;
  cloud_id: string;
  face_index: number;
  image_urls: string[];
}

export interface GroupConsensus {
  consensus: number;
  match: boolean;
}

export interface CiReport {
  ci: number | null;
  n_groups: number;
  total_groups: number;
  per_rater: Record<string, number>;
  per_group: Record<string, GroupConsensus>;
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url);
  } catch (err) {
    throw new ApiError(`network failure: ${String(err)}`);
  }
  if (!resp.ok) {
    throw new ApiError(`GET ${url} -> ${resp.status}`, resp.status);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  groups(): Promise<Group[]> {
    return getJson<Group[]>(`${this.base}/groups`);
  }

  selections(raterId: string): Promise<Record<string, number>> {
    const q = encodeURIComponent(raterId);
    return getJson<Record<string, number>>(`${this.base}/selections?rater_id=${q}`);
  }

  ci(): Promise<CiReport> {
    return getJson<CiReport>(`${this.base}/ci`);
  }

  imageUrl(path: string): string {
    return `${this.base}${path}`;
  }

  async submitSelection(groupId: string, raterId: string, worstIndex: number): Promise<void> {
    let resp: Response;
    try {
      resp = await fetch(`${this.base}/selection`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          group_id: groupId,
          rater_id: raterId,
          worst_index: worstIndex,
        }),
      });
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    if (!resp.ok) {
      throw new ApiError(`POST /selection -> ${resp.status}`, resp.status);
    }
  }
}
