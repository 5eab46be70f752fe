/**
 * Headless interop run for CI: connect to a live coordinator, replay its
 * scenario as the given client, print (or write) the NDJSON behavior log.
 *
 *   npm run build && node dist/headlessMain.js \
 *        --url http://127.0.0.1:8787 --client c0 --out client_log.ndjson
 */

import { writeFileSync } from "node:fs";

import { runHeadless } from "./nodeClient.js";

function arg(name: string, fallback: string): string {
  const index = process.argv.indexOf(`--${name}`);
  return index >= 0 && process.argv[index + 1] ? process.argv[index + 1] : fallback;
}

const url = arg("url", "http://127.0.0.1:8787");
const clientId = arg("client", "c0");
const out = arg("out", "");

const { session } = await runHeadless(url, clientId);
const ndjson = session.log.ndjson() + "\n";
if (out) {
  writeFileSync(out, ndjson);
  console.error(
    `wrote ${session.log.records.length} records to ${out}; decode errors: ${session.errors.length}`,
  );
} else {
  process.stdout.write(ndjson);
}
