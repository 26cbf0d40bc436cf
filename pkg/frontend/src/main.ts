/** Browser bootstrap: wires the store, client and renderers to the DOM.
 * All data arrives over the documented JSON/event-stream API. */

import { ApiClient, subscribeStream } from "./client.js";
import {
  renderBoard, renderConnection, renderCriticalGenerators, renderRanking,
  renderSparkline, renderWhatifTable,
} from "./render.js";
import { ConsoleStore } from "./store.js";

const STALE_AFTER_MS = 5000;

export function bootstrap(root: Document, baseUrl: string): void {
  const client = new ApiClient(baseUrl);
  const store = new ConsoleStore();
  const el = (id: string) => root.getElementById(id);

  const redraw = () => {
    el("connection")!.innerHTML = renderConnection(store);
    el("board")!.innerHTML = renderBoard(store);
    el("generators")!.innerHTML = renderCriticalGenerators(store);
    el("whatif-table")!.innerHTML = renderWhatifTable(store.whatifRows);
    el("ranking")!.innerHTML = renderRanking(store.ranking);
    const sparks = store.latest
      ? Object.keys(store.latest.buses)
          .map((bus) => `<div>${bus} ${renderSparkline(store, bus)}</div>`)
          .join("")
      : "";
    el("sparklines")!.innerHTML = sparks;
  };
  store.subscribe(redraw);

  let lastPush = Date.now();
  subscribeStream(client, {
    onReport(report) {
      lastPush = Date.now();
      store.applyReport(report);
      client.criticalGenerators().then(
        (p) => store.setCriticalGenerators(p),
        () => undefined,
      );
    },
    onState(state) {
      store.setConnection(state);
    },
  });
  setInterval(() => {
    if (store.connection === "live" && Date.now() - lastPush > STALE_AFTER_MS) {
      store.setConnection("stale");
    }
  }, 1000);

  el("whatif-form")!.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const input = el("whatif-branch") as HTMLInputElement;
    void store.requestWhatif(client, input.value.trim());
  });
  el("threshold-form")!.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const input = el("threshold-value") as HTMLInputElement;
    const value = Number(input.value);
    if (Number.isFinite(value) && value > 0 && value < 2) {
      void store.setThreshold(value, client);
    }
  });
  el("ranking-refresh")!.addEventListener("click", () => {
    client.ranking().then(
      (rows) => store.setRanking(rows),
      () => undefined,
    );
  });

  redraw();
}

if (typeof document !== "undefined") {
  bootstrap(document, "");
}
