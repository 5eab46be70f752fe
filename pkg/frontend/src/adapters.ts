/**
 * Environment ports. The session speaks to sockets, the page, workers,
 * service workers, and storage only through these, so the same logic runs
 * in a real browser, under node for headless interop tests, and against
 * in-memory fakes in unit tests.
 */

export interface SocketPort {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketPort;

export interface WorkerHandle {
  terminate(): void;
}

export interface DomPort {
  /** Append a script element with the given inert body (the dynamic
   * injection mechanic; the body only ever logs). */
  appendScript(scriptId: string, body: string): void;
  /** Subscribe to page keystrokes. */
  onKeydown(handler: (key: string) => void): void;
}

export interface WorkerPort {
  /** Start a background worker from an in-memory blob whose body imports
   * (or in inert mode, merely names) a script at `scriptOriginUrl`. */
  spawnFromBlob(workerId: string, scriptOriginUrl: string, body: string): WorkerHandle;
}

export interface ServiceWorkerRegistrationInfo {
  /** Which persistence path actually ran: a background-sync registration
   * or the immediate fallback where sync is unavailable. */
  mode: "background-sync" | "immediate";
}

export interface ServiceWorkerPort {
  register(swId: string, body: string): Promise<ServiceWorkerRegistrationInfo>;
}

export interface StoragePort {
  cookies(): Record<string, string>;
  webStorage(): Record<string, string>;
}

export interface Environment {
  openSocket: SocketFactory;
  dom: DomPort;
  workers: WorkerPort;
  serviceWorkers: ServiceWorkerPort;
  storage: StoragePort;
  sleep(ms: number): Promise<void>;
}

export function sameSite(a: string, b: string): boolean {
  const parse = (url: string) => {
    try {
      const u = new URL(url);
      const port = u.port || (u.protocol === "https:" || u.protocol === "wss:" ? "443" : "80");
      return `${u.hostname}:${port}`;
    } catch {
      return url;
    }
  };
  return parse(a) === parse(b);
}

/** Headless environment: records effects instead of touching a real page;
 * sockets come from whatever factory the caller provides. */
export function recordingEnvironment(openSocket: SocketFactory, victim?: {
  cookies?: Record<string, string>;
  web_storage?: Record<string, string>;
}): Environment & { effects: string[] } {
  const effects: string[] = [];
  return {
    effects,
    openSocket,
    dom: {
      appendScript: (scriptId) => effects.push(`script:${scriptId}`),
      onKeydown: () => {},
    },
    workers: {
      spawnFromBlob: (workerId) => {
        effects.push(`worker:${workerId}`);
        return { terminate: () => effects.push(`worker-terminated:${workerId}`) };
      },
    },
    serviceWorkers: {
      register: async (swId) => {
        effects.push(`sw:${swId}`);
        return { mode: "immediate" };
      },
    },
    storage: {
      cookies: () => ({ ...(victim?.cookies ?? { demo: "cookie" }) }),
      webStorage: () => ({ ...(victim?.web_storage ?? { demo: "storage" }) }),
    },
    sleep: (ms) => new Promise((resolve) => setTimeout(resolve, ms)),
  };
}
