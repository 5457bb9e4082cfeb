# Generated by Django 3.2.20

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('algorithm', models.CharField(choices=[('BP', 'Backpropagation'), ('FA', 'Feedback alignment'), ('DFA', 'Direct feedback alignment'), ('MEMDFA', 'Memory-efficient DFA')], max_length=8)),
                ('model_name', models.CharField(max_length=255)),
                ('learning_rate', models.FloatField()),
                ('batch_size', models.PositiveIntegerField()),
                ('epochs', models.PositiveIntegerField()),
                ('seed', models.PositiveIntegerField()),
                ('feedback_policy', models.CharField(default='fixed', max_length=32)),
                ('precision', models.CharField(default='f32', max_length=8)),
                ('manifest', models.JSONField(default=dict)),
                ('final_accuracy', models.FloatField(blank=True, null=True)),
                ('peak_activation_bytes', models.BigIntegerField(default=0)),
                ('forward_matmuls', models.PositiveIntegerField(default=0)),
                ('backward_matmuls', models.PositiveIntegerField(default=0)),
                ('feedback_projections', models.PositiveIntegerField(default=0)),
                ('steps', models.PositiveIntegerField(default=0)),
                ('output_dir', models.CharField(blank=True, max_length=1024)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='EpochResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.PositiveIntegerField()),
                ('train_loss', models.FloatField()),
                ('test_accuracy', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epoch_results', to='core.trainingrun')),
            ],
            options={
                'ordering': ['epoch'],
            },
        ),
        migrations.AddConstraint(
            model_name='epochresult',
            constraint=models.UniqueConstraint(fields=('run', 'epoch'), name='unique_epoch_per_run'),
        ),
    ]
