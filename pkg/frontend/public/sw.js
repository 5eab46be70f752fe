// Inert persistence demo: a background worker that logs its sync wakeups.
// No network activity, no storage access beyond its own registration.
self.addEventListener("install", () => {
  self.skipWaiting();
});

self.addEventListener("activate", (event) => {
  event.waitUntil(self.clients.claim());
});

self.addEventListener("sync", (event) => {
  if (event.tag === "mal-service-worker") {
    event.waitUntil(Promise.resolve(console.log("sync wakeup (inert)")));
  }
});
