import { App } from "./app.js";
import { wsUrlFromQuery } from "./urls.js";

new App(wsUrlFromQuery(window.location.search)).start();
