import pytest
from fastapi.testclient import TestClient

from app.api.main import app


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_dofs(client):
    response = client.post("/dofs", json={"d": 2, "k_poly": 1, "N": 3})
    assert response.status_code == 200
    assert response.json() == {"dofs": 80}
    response = client.post("/dofs", json={"d": 2, "k_poly": 1, "N": 3, "grid_kind": "full"})
    assert response.json() == {"dofs": 256}


def test_iif_coefficients(client):
    response = client.post("/iif-coefficients", json={"r": 3})
    assert response.status_code == 200
    body = response.json()
    assert body["coefficients"] == ["5/12", "2/3", "-1/12"]
    assert body["values"] == pytest.approx([5 / 12, 2 / 3, -1 / 12])


def test_iif_coefficients_out_of_range(client):
    assert client.post("/iif-coefficients", json={"r": 9}).status_code == 422


def test_spectrum(client):
    response = client.post("/spectrum", json={"d": 2, "k_poly": 1, "N": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["dofs"] == 32
    assert body["lambda0"] < 0
    assert body["cond2"] > 1


@pytest.mark.parametrize("payload", [
    {"d": 0, "k_poly": 1, "N": 3},
    {"d": 2, "k_poly": 1, "N": 3, "sigma": -1.0},
    {"d": 3, "k_poly": 3, "N": 10},
])
def test_spectrum_rejects_invalid_requests(client, payload):
    assert client.post("/spectrum", json=payload).status_code == 422
