import { createGatewayApi } from "./api.js";
import { createApp } from "./app.js";

// base URL precedence: ?base= query param, then window override, then the
// same origin that served these assets (the gateway's /ui mount).
const params = new URLSearchParams(window.location.search);
const override = (window as { EDGELLM_BASE?: string }).EDGELLM_BASE;
const base = params.get("base") ?? override ?? "";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
createApp(root, createGatewayApi(base));
