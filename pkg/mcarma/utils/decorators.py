import sys
from functools import wraps
import click
from mcarma.core.exceptions import AppException, handle_app_exception, handle_unexpected_exception

def catch_exceptions(func):
    """
    コマンドで発生した例外をログに出し、対応する終了コードで終了する
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AppException as e:
            sys.exit(handle_app_exception(e))
        except click.ClickException:
            raise
        except Exception as e:
            sys.exit(handle_unexpected_exception(e))
    return wrapper
