/**
 * Scripted replay: fetch the scenario the coordinator is serving and act
 * it out locally - user events fire on the session at their scripted
 * ticks, exactly like the simulator's user-event loop, so the resulting
 * observable-kind sequence is directly comparable.
 */

import { ClientSession } from "./session.js";

export interface ScenarioDoc {
  name: string;
  mode: string;
  payload_names: string[];
  user_event_script: [number, string, { event: string; [k: string]: unknown }][];
  victim_data: Record<string, { cookies?: Record<string, string>; web_storage?: Record<string, string> }>;
  static_scripts: (string | { name: string })[];
  cnc_url: string;
  victim_origin: string;
  stub?: boolean;
}

export function staticScriptNames(doc: ScenarioDoc): string[] {
  // same default page assets the coordinator assumes when the field is absent
  const entries = doc.static_scripts ?? ["app.js", "chat.js"];
  const names = entries.map((s) => (typeof s === "string" ? s : s.name));
  if (doc.stub !== false) names.push("feed_stub.js");
  return names;
}

export function victimDataFor(doc: ScenarioDoc, clientId: string) {
  return doc.victim_data?.[clientId] ?? doc.victim_data?.["*"] ?? {};
}

export async function runScripted(
  session: ClientSession,
  doc: ScenarioDoc,
  clientId: string,
  deliveryTimeoutMs = 10_000,
): Promise<void> {
  await session.start();
  if ((doc.payload_names ?? []).length > 0) {
    await session.waitForDeliveries(doc.payload_names.length, deliveryTimeoutMs);
  }
  const script = (doc.user_event_script ?? [])
    .filter(([, client]) => client === clientId)
    .slice()
    .sort((a, b) => a[0] - b[0]);
  for (const [tick, , event] of script) {
    await session.advanceTo(tick);
    switch (event.event) {
      case "ChatMessage":
        await session.deliverChat(String(event.text ?? ""));
        break;
      case "Keystroke":
        session.keystroke(String(event.key ?? "x"));
        break;
      // Navigate/BrowserClose/MachineRestart tear down a real page; the
      // scripted mirror has nothing left to do for them here.
      default:
        break;
    }
    // give delivered frames a chance to land between scripted ticks
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
  await session.finish();
}
