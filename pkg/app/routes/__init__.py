from quart import Quart
from .model import model_bp
from .assimilation import assimilation_bp


def register_routes(app: Quart):
    app.register_blueprint(model_bp, url_prefix='/api')
    app.register_blueprint(assimilation_bp, url_prefix='/api')
