/** Evaluator session identity: generated once, kept in browser storage.
 * Everything else (progress, presentation order) lives server-side. */

const STORAGE_KEY = "voxkit-session-id";

export function sessionId(storage: Storage = window.localStorage): string {
  let id = storage.getItem(STORAGE_KEY);
  if (!id) {
    id =
      typeof crypto.randomUUID === "function"
        ? crypto.randomUUID()
        : `s-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
    storage.setItem(STORAGE_KEY, id);
  }
  return id;
}
