/** Address handling: the page takes ?url=ws://host:port/ws and derives
 * the REST base from it. */

export const DEFAULT_WS_URL = "ws://127.0.0.1:8732/ws";

export function wsUrlFromQuery(search: string): string {
  const url = new URLSearchParams(search).get("url");
  return url !== null && url !== "" ? url : DEFAULT_WS_URL;
}

/** ws://h:p/ws -> http://h:p, wss -> https; path is dropped. */
export function httpBase(wsUrl: string): string {
  const parsed = new URL(wsUrl);
  const scheme = parsed.protocol === "wss:" ? "https:" : "http:";
  return `${scheme}//${parsed.host}`;
}
