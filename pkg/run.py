# ASGI entry point: `hypercorn run:app`, or `quart --app run:app <command>` for the CLI
from app import App

app = App(__name__)
