"""
WSGI entry point served by uwsgi in scripts/run.sh.

Exposes the read-only runs API and the admin pages over the run registry.
"""
import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "app.settings")

application = get_wsgi_application()
