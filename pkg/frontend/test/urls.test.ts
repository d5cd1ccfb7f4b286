import { describe, expect, it } from "vitest";

import { DEFAULT_WS_URL, httpBase, wsUrlFromQuery } from "../src/urls.js";

describe("wsUrlFromQuery", () => {
  it("falls back to the local default", () => {
    expect(wsUrlFromQuery("")).toBe(DEFAULT_WS_URL);
    expect(wsUrlFromQuery("?other=1")).toBe(DEFAULT_WS_URL);
    expect(wsUrlFromQuery("?url=")).toBe(DEFAULT_WS_URL);
  });

  it("honours ?url=", () => {
    expect(wsUrlFromQuery("?url=ws://10.0.0.5:9000/ws")).toBe(
      "ws://10.0.0.5:9000/ws",
    );
  });

  it("decodes an encoded value", () => {
    expect(wsUrlFromQuery("?url=ws%3A%2F%2Fhost%3A81%2Fws")).toBe(
      "ws://host:81/ws",
    );
  });
});

describe("httpBase", () => {
  it("swaps ws for http and drops the path", () => {
    expect(httpBase("ws://127.0.0.1:8732/ws")).toBe("http://127.0.0.1:8732");
  });

  it("maps wss to https", () => {
    expect(httpBase("wss://arm.example.com/ws")).toBe("https://arm.example.com");
  });
});
