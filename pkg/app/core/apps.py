from django.apps import AppConfig


class CoreConfig(AppConfig):
    """run registry and the train, compare and profile commands"""
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'core'
    verbose_name = "Training runs"
