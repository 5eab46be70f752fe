/**
 * Browser entry point. Served by the coordinator (`avtlab serve
 * --web-dir frontend/dist`); connects back over the page's own host.
 *
 * Two modes: `?scripted=1` replays the served scenario's user events
 * itself (the interop path), otherwise the page runs interactively - type
 * to feed the keystroke hook, use the chat box to fire token triggers.
 * Every payload step is the benign mirror: injected script bodies only
 * log, floods only log, exfil carries the scenario's demo data.
 */

import { Environment, SocketPort } from "./adapters.js";
import { ScenarioDoc, runScripted, staticScriptNames, victimDataFor } from "./scripted.js";
import { ClientSession } from "./session.js";

function browserEnvironment(doc: ScenarioDoc, clientId: string): Environment {
  const victim = victimDataFor(doc, clientId);
  return {
    openSocket: (url: string) => new WebSocket(url) as unknown as SocketPort,
    dom: {
      appendScript: (scriptId, body) => {
        const element = document.createElement("script");
        element.type = "text/javascript";
        element.id = scriptId;
        element.appendChild(document.createTextNode(body));
        document.body.appendChild(element);
      },
      onKeydown: (handler) => {
        document.addEventListener("keydown", (event) => handler(event.key));
      },
    },
    workers: {
      spawnFromBlob: (_workerId, scriptOriginUrl, body) => {
        const blob = new Blob([`${body}\n/* would import: ${scriptOriginUrl} */`], {
          type: "application/javascript",
        });
        const worker = new Worker(URL.createObjectURL(blob));
        return { terminate: () => worker.terminate() };
      },
    },
    serviceWorkers: {
      register: async () => {
        if (!("serviceWorker" in navigator)) {
          return { mode: "immediate" };
        }
        try {
          const registration = await navigator.serviceWorker.register("/sw.js");
          const sync = (registration as unknown as { sync?: { register(tag: string): Promise<void> } }).sync;
          if (sync) {
            await sync.register("mal-service-worker");
            return { mode: "background-sync" };
          }
        } catch {
          // registration unavailable (insecure context, etc.)
        }
        return { mode: "immediate" };
      },
    },
    storage: {
      // demo data from the scenario, never the visitor's real values
      cookies: () => ({ ...(victim.cookies ?? { demo: "cookie" }) }),
      webStorage: () => ({ ...(victim.web_storage ?? { demo: "storage" }) }),
    },
    sleep: (ms) => new Promise((resolve) => setTimeout(resolve, ms)),
  };
}

function renderLog(session: ClientSession, element: HTMLElement): void {
  element.textContent = session.log.ndjson();
  element.scrollTop = element.scrollHeight;
}

async function main(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const clientId = params.get("client") ?? "c0";
  const doc = (await (await fetch("/scenario")).json()) as ScenarioDoc;
  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  const env = browserEnvironment(doc, clientId);
  const session = new ClientSession({
    clientId,
    cncUrl: wsUrl,
    pageOrigin: location.origin,
    staticScripts: staticScriptNames(doc),
    env,
    rewriteChannelUrl: () => wsUrl,
  });

  const logView = document.getElementById("log") as HTMLElement;
  const status = document.getElementById("status") as HTMLElement;
  const timer = setInterval(() => renderLog(session, logView), 250);

  if (params.get("scripted") === "1") {
    status.textContent = `scripted replay of ${doc.name} as ${clientId}...`;
    await runScripted(session, doc, clientId);
    clearInterval(timer);
    renderLog(session, logView);
    status.textContent = `scripted replay done: ${session.log.records.length} records, ${session.errors.length} decode errors`;
    return;
  }

  status.textContent = `connected as ${clientId}; type anywhere, chat below`;
  await session.start();
  const chatForm = document.getElementById("chat-form") as HTMLFormElement;
  const chatInput = document.getElementById("chat-input") as HTMLInputElement;
  chatForm.addEventListener("submit", (event) => {
    event.preventDefault();
    void session.deliverChat(chatInput.value);
    chatInput.value = "";
  });
}

void main();
