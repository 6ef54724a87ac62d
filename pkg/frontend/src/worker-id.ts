/** Stable anonymous worker identifier, persisted in localStorage. */

export const STORAGE_KEY = "facesal_worker_id";

function randomId(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") {
    return c.randomUUID().replace(/-/g, "");
  }
  let out = "";
  for (let i = 0; i < 32; i++) {
    out += Math.floor(Math.random() * 16).toString(16);
  }
  return out;
}

/** Return the stored worker id, minting and persisting one on first use. */
export function getWorkerId(storage: Storage): string {
  const existing = storage.getItem(STORAGE_KEY);
  if (existing) {
    return existing;
  }
  const fresh = randomId();
  storage.setItem(STORAGE_KEY, fresh);
  return fresh;
}
