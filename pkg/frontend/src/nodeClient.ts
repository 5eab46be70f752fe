/**
 * Headless (node) wiring: real WebSockets from the `ws` package, recording
 * fakes for page effects. This is what CI interop runs use.
 */

import { WebSocket as WsSocket } from "ws";

import { Environment, SocketPort, recordingEnvironment } from "./adapters.js";
import { ScenarioDoc, runScripted, staticScriptNames, victimDataFor } from "./scripted.js";
import { ClientSession } from "./session.js";

export function nodeSocketFactory(): (url: string) => SocketPort {
  return (url: string) => new WsSocket(url) as unknown as SocketPort;
}

export interface HeadlessResult {
  session: ClientSession;
  env: Environment & { effects: string[] };
}

export async function runHeadless(
  baseHttpUrl: string,
  clientId = "c0",
  deliveryTimeoutMs = 10_000,
): Promise<HeadlessResult> {
  const scenarioResponse = await fetch(new URL("/scenario", baseHttpUrl));
  if (!scenarioResponse.ok) {
    throw new Error(`scenario fetch failed: ${scenarioResponse.status}`);
  }
  const doc = (await scenarioResponse.json()) as ScenarioDoc;
  const wsUrl = baseHttpUrl.replace(/^http/, "ws").replace(/\/$/, "") + "/ws";
  const env = recordingEnvironment(nodeSocketFactory(), victimDataFor(doc, clientId));
  const session = new ClientSession({
    clientId,
    cncUrl: wsUrl,
    pageOrigin: doc.mode === "malicious_server" ? doc.cnc_url : doc.victim_origin,
    staticScripts: staticScriptNames(doc),
    env,
    rewriteChannelUrl: () => wsUrl,
  });
  await runScripted(session, doc, clientId, deliveryTimeoutMs);
  return { session, env };
}
