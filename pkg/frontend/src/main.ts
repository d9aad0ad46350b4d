import { ApiClient } from "./api.js";
import { EvaluationApp } from "./app.js";
import { sessionId } from "./session.js";

const params = new URLSearchParams(window.location.search);
const campaign = params.get("campaign");
const root = document.getElementById("app")!;

if (!campaign) {
  root.textContent = "Missing ?campaign=<id> in the URL.";
} else {
  const app = new EvaluationApp(root, new ApiClient(""), campaign, sessionId());
  void app.start();
}
