import { StudioApi } from "./api.js";
import { mountStudio } from "./ui.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");
// served by the carikit service itself under /studio; the API lives at the origin root
void mountStudio(root, new StudioApi(""));
