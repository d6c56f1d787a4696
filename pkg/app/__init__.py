from quart import Quart
from .config import DAConfig
from .routes import register_routes
from .middleware import setup_middleware
from .commands import cli


class App(Quart):

    def __init__(self, name):
        super().__init__(name)

        self.config.from_object(DAConfig())
        self.logger.setLevel(DAConfig.LOG_LEVEL)

        setup_middleware(self)
        register_routes(self)
        for command in cli.commands.values():
            self.cli.add_command(command)

        self.logger.debug("Routes: \n" + str(self.url_map))
