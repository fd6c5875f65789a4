/** DOM rendering; all decision logic lives in state.ts. */

import type { HitSession } from "./state.js";
import { sentenceOptions } from "./state.js";

export function renderHit(
  root: HTMLElement,
  session: HitSession,
  onSubmit: () => void,
): void {
  root.replaceChildren();

  const heading = document.createElement("h2");
  heading.textContent = `Task ${session.hit.hit_id}`;
  root.appendChild(heading);

  session.hit.documents.forEach((doc, docIndex) => {
    const card = document.createElement("section");
    card.className = "document-card";
    card.dataset.documentId = doc.document_id;

    const title = document.createElement("h3");
    title.textContent = `Document ${docIndex + 1} of ${session.hit.documents.length}`;
    card.appendChild(title);

    const list = document.createElement("ol");
    doc.sentences.forEach((text, i) => {
      const item = document.createElement("li");
      item.textContent = text;
      if (i === 0) {
        item.className = "opening-sentence"; // shown, never selectable
      }
      list.appendChild(item);
    });
    card.appendChild(list);

    const group = document.createElement("fieldset");
    const legend = document.createElement("legend");
    legend.textContent = "Which sentence breaks the flow?";
    group.appendChild(legend);

    for (const option of sentenceOptions(doc.sentences)) {
      const label = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `choice-${doc.document_id}`;
      radio.value = String(option.value);
      radio.checked = session.getSelection(doc.document_id) === option.value;
      radio.addEventListener("change", () => {
        const value = radio.value === "NONE" ? "NONE" : Number(radio.value);
        session.setSelection(doc.document_id, value as never);
        refreshSubmitState(root, session);
      });
      label.appendChild(radio);
      label.appendChild(document.createTextNode(` ${option.label}`));
      group.appendChild(label);
    }
    card.appendChild(group);

    const error = document.createElement("p");
    error.className = "error";
    error.hidden = true;
    card.appendChild(error);

    root.appendChild(card);
  });

  const submit = document.createElement("button");
  submit.id = "submit-hit";
  submit.textContent = "Submit all five answers";
  submit.disabled = !session.complete;
  submit.addEventListener("click", onSubmit);
  root.appendChild(submit);

  const note = document.createElement("p");
  note.id = "submit-note";
  note.textContent = session.complete
    ? ""
    : "Answer every document to enable submission.";
  root.appendChild(note);
}

export function refreshSubmitState(root: HTMLElement, session: HitSession): void {
  const submit = root.querySelector<HTMLButtonElement>("#submit-hit");
  const note = root.querySelector<HTMLParagraphElement>("#submit-note");
  if (submit) {
    submit.disabled = !session.complete;
  }
  if (note) {
    note.textContent = session.complete ? "" : "Answer every document to enable submission.";
  }
}

export function showErrors(root: HTMLElement, session: HitSession): void {
  for (const card of root.querySelectorAll<HTMLElement>(".document-card")) {
    const docId = card.dataset.documentId ?? "";
    const error = card.querySelector<HTMLParagraphElement>(".error");
    if (!error) continue;
    const message = session.errorFor(docId);
    error.hidden = !message;
    error.textContent = message ?? "";
  }
}

export function showBanner(root: HTMLElement, text: string, kind: "info" | "retry"): void {
  let banner = root.querySelector<HTMLElement>("#banner");
  if (!banner) {
    banner = document.createElement("div");
    banner.id = "banner";
    root.prepend(banner);
  }
  banner.className = `banner banner-${kind}`;
  banner.textContent = text;
}
