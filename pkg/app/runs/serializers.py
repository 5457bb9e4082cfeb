"""serializers for the runs api"""

from rest_framework import serializers

from core.models import EpochResult, TrainingRun


class EpochResultSerializer(serializers.ModelSerializer):
    """serializer for one epoch of a run"""

    class Meta:
        model = EpochResult
        fields = ["epoch", "train_loss", "test_accuracy"]
        read_only_fields = fields


class TrainingRunSerializer(serializers.ModelSerializer):
    """serializer for training runs"""

    class Meta:
        model = TrainingRun
        fields = [
            "id", "algorithm", "model_name", "learning_rate", "batch_size",
            "epochs", "seed", "final_accuracy", "peak_activation_bytes",
            "created_at",
        ]
        read_only_fields = fields


class TrainingRunDetailSerializer(TrainingRunSerializer):
    """serializer for training run detail view"""
    epoch_results = EpochResultSerializer(many=True, read_only=True)

    class Meta(TrainingRunSerializer.Meta):
        fields = TrainingRunSerializer.Meta.fields + [
            "feedback_policy", "precision", "forward_matmuls",
            "backward_matmuls", "feedback_projections", "steps",
            "manifest", "epoch_results",
        ]
        read_only_fields = fields
