"""test for admin"""
from django.contrib.auth import get_user_model
from django.test import Client, TestCase
from django.urls import reverse

from core import models
from core.tests.test_models import sample_manifest, sample_result


class AdminSiteTests(TestCase):

    def setUp(self):
        """create admin user, client and one run"""
        self.client = Client()
        self.admin_user = get_user_model().objects.create_superuser(
            username="admin",
            email="admin@example.com",
            password="test123",
        )
        self.client.force_login(self.admin_user)
        self.run = models.TrainingRun.objects.record(
            sample_manifest(model="cifar-cnn3"), sample_result(),
        )

    def test_runs_list(self):
        """test that runs are listed on page"""
        url = reverse("admin:core_trainingrun_changelist")
        res = self.client.get(url)

        self.assertContains(res, "cifar-cnn3")
        self.assertContains(res, "4096")

    def test_edit_run_page(self):
        """test the change page shows the epoch inline"""
        url = reverse("admin:core_trainingrun_change", args=[self.run.id])
        res = self.client.get(url)

        self.assertEqual(res.status_code, 200)
        self.assertContains(res, "0.81")

    def test_filter_by_algorithm(self):
        url = reverse("admin:core_trainingrun_changelist")
        res = self.client.get(url, {"algorithm__exact": "BP"})

        self.assertEqual(res.status_code, 200)
        self.assertEqual(res.context["cl"].result_count, 0)
