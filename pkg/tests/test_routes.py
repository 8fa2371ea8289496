"""HTTP monitor endpoints, driven through Flask's test client."""
import pytest

from weaves import create_app
from weaves.monitor import Monitor
from weaves.tapestry_config import build

SMALL = """\
module acc
bead A acc
weave W A
string s1 W acc.bump 2
"""


@pytest.fixture
def handle(catalog):
    return build(SMALL, catalog=catalog, name="routes")


@pytest.fixture
def client(handle):
    app = create_app(Monitor(handle, timeout=5.0), {"TESTING": True})
    return app.test_client()


class TestQueries:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        data = response.get_json()
        assert data["status"] == "healthy"
        assert data["tapestry"] == "routes"
        assert data["paused"] is False
        assert "ADD-STRING" in data["verbs"]

    def test_beads(self, client, handle):
        data = client.get("/beads").get_json()
        assert data == {"status": "ok", "generation": handle.tapestry.generation, "lines": ["A module=acc id=0"]}

    def test_strings(self, client):
        lines = client.get("/strings").get_json()["lines"]
        assert lines == ["0 s1 weave=W entry=acc.bump status=runnable class=0"]

    def test_snapshot(self, client):
        response = client.get("/snapshot/W")
        assert response.status_code == 200
        assert "acc.x = 0" in response.get_json()["lines"]

    def test_unknown_weave_is_404(self, client):
        response = client.get("/snapshot/nowhere")
        assert response.status_code == 404
        assert response.get_json()["code"] == "unknown-weave"

    def test_tapestry_and_stats(self, client):
        assert client.get("/tapestry").get_json()["lines"][-1] == "string s1 W acc.bump 2"
        assert "runnable 1" in client.get("/stats").get_json()["lines"]


class TestMonitorLine:
    def test_control_verb(self, client, handle):
        response = client.post("/monitor", json={"line": "ADD-BEAD A2 acc"})
        assert response.status_code == 200
        assert response.get_json()["lines"] == ["1"]
        assert handle.tapestry.bead("A2").module == "acc"

    def test_pause_conflict(self, client):
        assert client.post("/monitor", json={"line": "PAUSE"}).status_code == 200
        response = client.post("/monitor", json={"line": "PAUSE"})
        assert response.status_code == 409
        assert response.get_json()["code"] == "already-paused"

    @pytest.mark.parametrize("body", [{}, {"line": ""}, {"line": 3}, {"line": "STATS\nSTATS"}])
    def test_bad_bodies(self, client, body):
        response = client.post("/monitor", json=body)
        assert response.status_code == 400
        assert response.get_json()["code"] == "parse"

    def test_requires_json(self, client):
        response = client.post("/monitor", data="STATS")
        assert response.status_code == 400

    def test_unknown_verb_is_400(self, client):
        response = client.post("/monitor", json={"line": "FROB"})
        assert response.status_code == 400
        assert response.get_json()["code"] == "unknown-verb"
