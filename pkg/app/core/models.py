"""
Database models.
"""
from django.db import models, transaction


class TrainingRunManager(models.Manager):

    def record(self, manifest, result, output_dir=""):
        """create and return a run with one EpochResult per history entry"""
        if not manifest.get("algorithm"):
            raise ValueError("A run must name its algorithm.")

        with transaction.atomic(using=self._db):
            run = self.create(
                algorithm=manifest["algorithm"],
                model_name=manifest["model"],
                learning_rate=float(manifest["learning_rate"]),
                batch_size=int(manifest["batch_size"]),
                epochs=int(manifest["epochs"]),
                seed=int(manifest["seed"]),
                feedback_policy=manifest.get("feedback_policy", "fixed"),
                precision=manifest.get("precision", "f32"),
                manifest=dict(manifest),
                final_accuracy=result.final_accuracy,
                peak_activation_bytes=result.peak_activation_bytes,
                forward_matmuls=result.op_counts.get("forward_matmuls", 0),
                backward_matmuls=result.op_counts.get("backward_matmuls", 0),
                feedback_projections=result.op_counts.get(
                    "feedback_projections", 0,
                ),
                steps=result.steps,
                output_dir=str(output_dir),
            )
            EpochResult.objects.using(self._db).bulk_create([
                EpochResult(
                    run=run,
                    epoch=record.epoch,
                    train_loss=record.train_loss,
                    test_accuracy=record.test_accuracy,
                )
                for record in result.history
            ])
        return run


class TrainingRun(models.Model):
    """one finished training run and its resolved configuration"""
    ALGORITHM_CHOICES = [
        ("BP", "Backpropagation"),
        ("FA", "Feedback alignment"),
        ("DFA", "Direct feedback alignment"),
        ("MEMDFA", "Memory-efficient DFA"),
    ]

    algorithm = models.CharField(max_length=8, choices=ALGORITHM_CHOICES)
    model_name = models.CharField(max_length=255)
    learning_rate = models.FloatField()
    batch_size = models.PositiveIntegerField()
    epochs = models.PositiveIntegerField()
    seed = models.PositiveIntegerField()
    feedback_policy = models.CharField(max_length=32, default="fixed")
    precision = models.CharField(max_length=8, default="f32")
    manifest = models.JSONField(default=dict)
    final_accuracy = models.FloatField(null=True, blank=True)
    peak_activation_bytes = models.BigIntegerField(default=0)
    forward_matmuls = models.PositiveIntegerField(default=0)
    backward_matmuls = models.PositiveIntegerField(default=0)
    feedback_projections = models.PositiveIntegerField(default=0)
    steps = models.PositiveIntegerField(default=0)
    output_dir = models.CharField(max_length=1024, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    objects = TrainingRunManager()

    class Meta:
        ordering = ["-created_at", "-id"]

    def __str__(self):
        return f"{self.algorithm} on {self.model_name} (seed {self.seed})"


class EpochResult(models.Model):
    run = models.ForeignKey(
        TrainingRun,
        on_delete=models.CASCADE,
        related_name="epoch_results",
    )
    epoch = models.PositiveIntegerField()
    train_loss = models.FloatField()
    test_accuracy = models.FloatField()

    class Meta:
        ordering = ["epoch"]
        constraints = [
            models.UniqueConstraint(
                fields=["run", "epoch"], name="unique_epoch_per_run",
            ),
        ]

    def __str__(self):
        return f"epoch {self.epoch}: {self.test_accuracy:.4f}"
