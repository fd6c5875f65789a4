/** Bootstrap: wire the API client, session state, and DOM together. */

import { ApiClient } from "./api.js";
import { HitSession } from "./state.js";
import { refreshSubmitState, renderHit, showBanner, showErrors } from "./view.js";

function workerIdFromPage(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("worker");
  if (fromUrl) {
    window.localStorage.setItem("annotation:worker", fromUrl);
    return fromUrl;
  }
  let stored = window.localStorage.getItem("annotation:worker");
  if (!stored) {
    stored = `worker-${Math.random().toString(36).slice(2, 10)}`;
    window.localStorage.setItem("annotation:worker", stored);
  }
  return stored;
}

async function loadNext(api: ApiClient, root: HTMLElement, workerId: string): Promise<void> {
  let hit;
  try {
    hit = await api.fetchHit(workerId);
  } catch (err) {
    showBanner(root, `Could not reach the server (${String(err)}). Retrying in 5s.`, "retry");
    window.setTimeout(() => void loadNext(api, root, workerId), 5000);
    return;
  }
  if (hit === null) {
    root.replaceChildren();
    showBanner(root, "All tasks are finished. Thank you!", "info");
    return;
  }
  const session = new HitSession(hit, workerId, window.localStorage);
  const onSubmit = async () => {
    const outcomes = await session.submitAll(api);
    showErrors(root, session);
    if (session.allAcknowledged) {
      session.clear();
      showBanner(root, "Answers recorded. Loading the next task.", "info");
      await loadNext(api, root, workerId);
    } else {
      const failed = outcomes.filter((o) => o.status === "rejected" || o.status === "network-error");
      showBanner(
        root,
        `${failed.length} answer(s) were not recorded; your selections are kept. ` +
          "Fix any errors and submit again.",
        "retry",
      );
      refreshSubmitState(root, session);
    }
  };
  renderHit(root, session, () => void onSubmit());
}

const root = document.getElementById("app");
if (root) {
  const api = new ApiClient();
  void loadNext(api, root, workerIdFromPage());
}
