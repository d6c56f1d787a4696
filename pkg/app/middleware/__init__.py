from functools import wraps

from pydantic import ValidationError
from quart import Quart, current_app, jsonify
from quart_cors import cors

from ..config import DAConfig
from ..utils.errors import DAError


def setup_middleware(app: Quart):
    # Origins come from DA_CORS_ORIGINS (comma separated)
    return cors(app, allow_origin=DAConfig.CORS_ORIGINS)


def json_errors(f):
    """Turn toolkit and validation errors into JSON responses."""
    @wraps(f)
    async def decorated_function(*args, **kwargs):
        try:
            return await f(*args, **kwargs)
        except (DAError, ValidationError) as e:
            current_app.logger.info(f"{f.__name__}: rejected request: {e}")
            return jsonify({'error': type(e).__name__, 'message': str(e)}), 400
        except Exception as e:
            current_app.logger.exception(f"{f.__name__}: unexpected failure: {e}")
            return jsonify({'error': 'InternalError', 'message': 'Internal server error'}), 500
    return decorated_function
