from django.contrib import admin
from django.utils.translation import gettext_lazy as _

from core import models


class EpochResultInline(admin.TabularInline):
    model = models.EpochResult
    extra = 0
    readonly_fields = ["epoch", "train_loss", "test_accuracy"]


class TrainingRunAdmin(admin.ModelAdmin):
    """define admin pages for training runs"""
    ordering = ["-created_at"]
    list_display = [
        "algorithm", "model_name", "seed", "final_accuracy",
        "peak_activation_bytes", "created_at",
    ]
    list_filter = ["algorithm", "model_name"]
    fieldsets = (
        (None, {"fields": ("algorithm", "model_name", "output_dir")}),
        (
            _("Hyperparameters"),
            {
                "fields": (
                    "learning_rate",
                    "batch_size",
                    "epochs",
                    "seed",
                    "feedback_policy",
                    "precision",
                )
            }
        ),
        (
            _("Results"),
            {
                "fields": (
                    "final_accuracy",
                    "peak_activation_bytes",
                    "forward_matmuls",
                    "backward_matmuls",
                    "feedback_projections",
                    "steps",
                    "manifest",
                )
            }
        ),
    )
    readonly_fields = ["created_at"]
    inlines = [EpochResultInline]


admin.site.register(models.TrainingRun, TrainingRunAdmin)
