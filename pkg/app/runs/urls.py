"""url mappings for the runs app"""

from django.urls import (
    path, include
)

from rest_framework.routers import DefaultRouter
from runs import views

router = DefaultRouter()
router.register("runs", views.TrainingRunViewSet)

app_name = "runs"

urlpatterns = [
    path("", include(router.urls))
]
