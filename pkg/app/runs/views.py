"""views for the runs api"""
from drf_spectacular.utils import (
    extend_schema_view,
    extend_schema,
    OpenApiParameter,
    OpenApiTypes,
)
from rest_framework import viewsets
from rest_framework.authentication import TokenAuthentication
from rest_framework.permissions import IsAuthenticated

from core.models import TrainingRun
from runs import serializers


@extend_schema_view(
    list=extend_schema(
        parameters=[
            OpenApiParameter(
                "algorithm",
                OpenApiTypes.STR,
                description="Comma separated list of algorithms to filter",
            ),
            OpenApiParameter(
                "model",
                OpenApiTypes.STR,
                description="Comma separated list of model names to filter",
            ),
        ]
    )
)
class TrainingRunViewSet(viewsets.ReadOnlyModelViewSet):
    """view for browsing recorded training runs"""
    serializer_class = serializers.TrainingRunDetailSerializer
    queryset = TrainingRun.objects.all()
    authentication_classes = [TokenAuthentication]
    permission_classes = [IsAuthenticated]

    def _params_to_list(self, qs):
        """split a comma separated query param"""
        return [item.strip() for item in qs.split(",") if item.strip()]

    def get_queryset(self):
        """retrieve runs, newest first"""
        algorithms = self.request.query_params.get("algorithm")
        models = self.request.query_params.get("model")
        queryset = self.queryset

        if algorithms:
            names = [name.upper() for name in self._params_to_list(algorithms)]
            queryset = queryset.filter(algorithm__in=names)

        if models:
            queryset = queryset.filter(
                model_name__in=self._params_to_list(models),
            )

        return queryset.prefetch_related("epoch_results").order_by("-id")

    def get_serializer_class(self):
        """return the serializer class for request"""
        if self.action == "list":
            return serializers.TrainingRunSerializer

        return self.serializer_class
