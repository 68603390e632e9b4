// Participant console: picks an identity, shows one instance, and offers the
// operations that identity may perform. Refreshes on committed ledger events;
// nothing is shown before the server has committed it.

interface EnabledOp { element: string; op: string; role: string }
interface FieldSchema { name: string; type: string; required: boolean; description: string }
interface InterfaceOp { name: string; element: string; invoker: string; params: { fields?: FieldSchema[]; message?: string } }
interface MessageRecord { messageId: string; hash: string; status: string }
interface InstanceView {
  meta: { instanceId: string; contract: string; modelId: string; programDigest: string };
  elements: Record<string, { state: string; epoch: number }>;
  messages: Record<string, MessageRecord>;
  dmn: Record<string, { digest: string; cid: string | null }>;
  decisions: Record<string, unknown>;
  enabled: EnabledOp[];
  enabledForIdentity?: EnabledOp[];
  completed: boolean;
}

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;
const interfaces = new Map<string, InterfaceOp[]>();
let events: EventSource | null = null;
let polling: number | undefined;

function identityHeaders(): Record<string, string> {
  const h: Record<string, string> = {};
  const member = $<HTMLInputElement>("member").value.trim();
  const user = $<HTMLInputElement>("user").value.trim();
  const attrs = $<HTMLInputElement>("attributes").value.trim();
  if (member) h["X-Member"] = member;
  if (user) h["X-User"] = user;
  if (attrs) h["X-Attributes"] = attrs;
  return h;
}

async function call<T>(method: string, path: string, body?: BodyInit, json = true): Promise<T> {
  const headers: Record<string, string> = identityHeaders();
  if (body !== undefined && json) headers["Content-Type"] = "application/json";
  const res = await fetch(path, { method, headers, body });
  const data = await res.json();
  if (!res.ok) throw new Error(`${data.error}: ${data.reason}`);
  return data as T;
}

function el(tag: string, text?: string, cls?: string): HTMLElement {
  const e = document.createElement(tag);
  if (text !== undefined) e.textContent = text;
  if (cls) e.className = cls;
  return e;
}

function showError(e: unknown): void {
  $("error").textContent = e instanceof Error ? e.message : String(e);
}

const base = (): string => `/envs/${encodeURIComponent($<HTMLSelectElement>("env").value)}`;
const instPath = (): string => `${base()}/instances/${encodeURIComponent($<HTMLSelectElement>("instance").value)}`;

function fill(select: HTMLSelectElement, items: string[]): void {
  const keep = select.value;
  select.replaceChildren(...items.map((i) => { const o = el("option", i) as HTMLOptionElement; o.value = i; return o; }));
  if (items.includes(keep)) select.value = keep;
}

async function loadEnvs(): Promise<void> {
  fill($("env"), await call<string[]>("GET", "/envs"));
  await loadInstances();
}

async function loadInstances(): Promise<void> {
  if (!$<HTMLSelectElement>("env").value) return;
  fill($("instance"), await call<string[]>("GET", `${base()}/instances`));
  subscribe();
  await render();
}

async function contractOps(contract: string): Promise<InterfaceOp[]> {
  const key = `${base()}/${contract}`;
  if (!interfaces.has(key)) {
    const c = await call<{ interface: { operations: InterfaceOp[] } }>("GET", `${base()}/contracts/${encodeURIComponent(contract)}`);
    interfaces.set(key, c.interface.operations);
  }
  return interfaces.get(key)!;
}

function subscribe(): void {
  events?.close();
  const inst = $<HTMLSelectElement>("instance").value;
  const url = inst ? `${base()}/events?topic=${encodeURIComponent(inst)}` : `${base()}/events`;
  events = new EventSource(url);
  const onEvent = (ev: MessageEvent) => {
    const line = el("div", `${ev.lastEventId} ${ev.type} ${ev.data}`);
    $("log").prepend(line);
    void render();
  };
  for (const name of ["InstanceCreated", "InstanceStarted", "ElementEnabled", "MessageSent", "MessageConfirmed",
    "DecisionRequested", "DecisionMade", "OracleSave", "OracleFetch", "EndEventReached"]) {
    events.addEventListener(name, onEvent as EventListener);
  }
  // Poll every 2 s while the stream is down.
  events.onopen = () => { window.clearInterval(polling); polling = undefined; };
  events.onerror = () => { polling ??= window.setInterval(() => void render(), 2000); };
}

async function render(): Promise<void> {
  if (!$<HTMLSelectElement>("instance").value) return;
  try {
    const view = await call<InstanceView>("GET", instPath());
    $("error").textContent = "";
    renderView(view);
    await renderActions(view);
    await renderInbox(view);
    await renderDecisions(view);
  } catch (e) {
    showError(e);
  }
}

function renderView(view: InstanceView): void {
  const mine = new Set((view.enabledForIdentity ?? []).map((o) => o.element));
  const table = el("table");
  const head = el("tr");
  head.append(el("th", "Element"), el("th", "State"), el("th", "Epoch"));
  table.append(head, ...Object.entries(view.elements).map(([id, s]) => {
    const tr = el("tr", undefined, mine.has(id) ? "enabled" : undefined);
    tr.append(el("td", id), el("td", s.state), el("td", String(s.epoch)));
    return tr;
  }));
  const title = el("p", `${view.meta.instanceId} (${view.meta.contract}) ${view.completed ? "completed" : "running"}`);
  $("view").replaceChildren(title, table);
}

async function uploadFile(file: File): Promise<string> {
  const r = await call<{ cid: string }>("POST", "/cas", await file.arrayBuffer(), false);
  return r.cid;
}

async function messageForm(element: string, fields: FieldSchema[]): Promise<HTMLElement> {
  const form = el("form") as HTMLFormElement;
  form.append(el("strong", `Send ${element}`));
  for (const f of fields) {
    const label = el("label", ` ${f.name}${f.required ? "*" : ""} `);
    const input = el("input") as HTMLInputElement;
    input.name = f.name;
    input.type = f.type === "file" ? "file" : f.type === "boolean" ? "checkbox" : f.type === "number" ? "number" : "text";
    if (f.type === "number") input.step = "any";
    input.title = f.description;
    label.append(input);
    form.append(label);
  }
  form.append(el("button", "Send"));
  form.onsubmit = async (ev) => {
    ev.preventDefault();
    try {
      const payload: Record<string, unknown> = {};
      for (const f of fields) {
        const input = form.elements.namedItem(f.name) as HTMLInputElement;
        if (f.type === "file") {
          if (input.files?.length) payload[f.name] = await uploadFile(input.files[0]);
        } else if (f.type === "boolean") {
          payload[f.name] = input.checked;
        } else if (input.value !== "") {
          payload[f.name] = f.type === "number" ? Number(input.value) : input.value;
        }
      }
      await call("POST", `${instPath()}/tasks/${encodeURIComponent(element)}/message`, JSON.stringify(payload));
      await render();
    } catch (e) {
      showError(e);
    }
  };
  return form;
}

function button(text: string, path: string): HTMLElement {
  const b = el("button", text) as HTMLButtonElement;
  b.onclick = async () => {
    try {
      await call("POST", path);
      await render();
    } catch (e) {
      showError(e);
    }
  };
  return b;
}

async function renderActions(view: InstanceView): Promise<void> {
  const ops = await contractOps(view.meta.contract);
  const out: HTMLElement[] = [];
  for (const op of view.enabledForIdentity ?? []) {
    if (op.op === "Message") {
      const def = ops.find((o) => o.name === "Message" && o.element === op.element);
      out.push(await messageForm(op.element, def?.params.fields ?? []));
    } else if (op.op === "BusinessRuleTask") {
      out.push(button(`Evaluate ${op.element}`, `${instPath()}/brts/${encodeURIComponent(op.element)}/trigger`));
    }
  }
  if (out.length === 0) out.push(el("p", "Nothing to send or evaluate for this identity."));
  $("actions").replaceChildren(...out.map((n) => { const d = el("div"); d.append(n); return d; }));
}

// Messages the identity may read. Confirm is offered only for its own
// pending confirmations, and only while the payload matches its recorded hash.
async function renderInbox(view: InstanceView): Promise<void> {
  const confirmable = new Set((view.enabledForIdentity ?? []).filter((o) => o.op === "MessageConfirm").map((o) => o.element));
  const out: HTMLElement[] = [];
  for (const [task, rec] of Object.entries(view.messages)) {
    const box = el("div");
    box.append(el("strong", `${task} (${rec.status})`));
    let matches = false;
    try {
      const p = await call<{ payload: unknown; hash: string; recordedHash: string | null; matches: boolean }>(
        "GET", `${instPath()}/tasks/${encodeURIComponent(task)}/payload`);
      matches = p.matches;
      box.append(
        el("span", p.matches ? " hash matches" : " hash MISMATCH", p.matches ? "ok" : "bad"),
        el("pre", JSON.stringify(p.payload, null, 2)),
      );
    } catch (e) {
      box.append(el("span", ` ${e instanceof Error ? e.message : e}`));
    }
    if (confirmable.has(task)) {
      const b = button(`Confirm ${task}`, `${instPath()}/tasks/${encodeURIComponent(task)}/confirm`) as HTMLButtonElement;
      b.disabled = !matches;
      box.append(b);
    }
    out.push(box);
  }
  $("inbox").replaceChildren(...out);
}

interface Decision { dmnId: string; digest: string; inputs: unknown; outputs: unknown; trace: unknown[] }

async function renderDecisions(view: InstanceView): Promise<void> {
  const out: HTMLElement[] = [];
  for (const [brt, d] of Object.entries(view.dmn)) {
    const box = el("div");
    box.append(el("strong", brt), el("span", ` bound DMN digest ${d.digest}`));
    const made = view.decisions[brt] as Decision | undefined;
    if (made) {
      box.append(el("pre", JSON.stringify({ inputs: made.inputs, outputs: made.outputs, trace: made.trace }, null, 2)));
      const log = await call<{ events: { name: string; payload: { elementId?: string } }[] }[]>(
        "GET", `${base()}/audit?instance=${encodeURIComponent(view.meta.instanceId)}&element=${encodeURIComponent(brt)}&op=BusinessRuleTaskCallback`);
      const routed = log.flatMap((tx) => tx.events).filter((e) => e.name === "ElementEnabled").map((e) => e.payload.elementId);
      box.append(el("p", `enabled: ${routed.join(", ") || "nothing"}`));
    } else {
      box.append(el("p", "not evaluated yet"));
    }
    out.push(box);
  }
  $("decisions").replaceChildren(...out);
}

function remember(id: string): void {
  const input = $<HTMLInputElement>(id);
  input.value = localStorage.getItem(`console.${id}`) ?? "";
  input.onchange = () => {
    localStorage.setItem(`console.${id}`, input.value);
    void render();
  };
}

["member", "user", "attributes"].forEach(remember);
$("env").onchange = () => void loadInstances().catch(showError);
$("instance").onchange = () => { subscribe(); void render(); };
$("refresh").onclick = () => void loadEnvs().catch(showError);
void loadEnvs().catch(showError);
