# models/run_config.py
import configparser
import hashlib
import io
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from config import DEFAULT_DIMENSION, EXPERIMENTS


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _join(values) -> str:
    return ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in values)


class SceneSpec(BaseModel):
    d: int = Field(DEFAULT_DIMENSION, ge=3)
    k1: str = Field("singleton", description="singleton | ball:<r> | sites:x,y,z;...")
    xhat: List[int] = Field(default_factory=lambda: [33, 0, 0])
    u: float = Field(1.0, ge=0.0)

    @field_validator("k1")
    @classmethod
    def _known_k1(cls, value: str) -> str:
        value = value.strip()
        if value != "singleton" and not value.startswith(("ball:", "sites:")):
            raise ValueError(f"unknown K1 specification: {value!r}")
        return value


class EngineSpec(BaseModel):
    seed: int = 0
    replicas: int = Field(1000, ge=1)
    threads: int = Field(1, ge=1)
    memory_lean: bool = True
    ns_method: Literal["slt", "direct"] = "slt"


class ExperimentSpec(BaseModel):
    name: Literal[tuple(EXPERIMENTS)] = "lemmas"
    distances: List[float] = Field(default_factory=lambda: [16.0, 32.0, 64.0, 128.0])
    levels: List[float] = Field(default_factory=list)
    radii: List[int] = Field(default_factory=list, description="Capacity ladder: K1 = balls of these radii.")
    lemma_radii: List[int] = Field(default_factory=lambda: [16, 32, 64, 128])
    f1: List[float] = Field(default_factory=lambda: [0.0, 1.0], description="Truth table over 2^|K1| patterns.")
    f2: List[float] = Field(default_factory=lambda: [0.0, 1.0])


class RunConfig(BaseModel):
    """Everything a run depends on; serialises to the sectioned INI file it was read from."""
    scene: SceneSpec = Field(default_factory=SceneSpec)
    engine: EngineSpec = Field(default_factory=EngineSpec)
    experiment: ExperimentSpec = Field(default_factory=ExperimentSpec)

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        scene = dict(parser["scene"]) if parser.has_section("scene") else {}
        engine = dict(parser["engine"]) if parser.has_section("engine") else {}
        experiment = dict(parser["experiment"]) if parser.has_section("experiment") else {}
        if "xhat" in scene:
            scene["xhat"] = _ints(scene["xhat"])
        for key in ("distances", "levels", "f1", "f2"):
            if key in experiment:
                experiment[key] = _floats(experiment[key])
        for key in ("radii", "lemma_radii"):
            if key in experiment:
                experiment[key] = _ints(experiment[key])
        return cls(scene=SceneSpec(**scene), engine=EngineSpec(**engine), experiment=ExperimentSpec(**experiment))

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_ini(f.read())

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["scene"] = {
            "d": str(self.scene.d),
            "k1": self.scene.k1,
            "xhat": _join(self.scene.xhat),
            "u": repr(self.scene.u),
        }
        parser["engine"] = {
            "seed": str(self.engine.seed),
            "replicas": str(self.engine.replicas),
            "threads": str(self.engine.threads),
            "memory_lean": str(self.engine.memory_lean).lower(),
            "ns_method": self.engine.ns_method,
        }
        exp = self.experiment
        parser["experiment"] = {
            "name": exp.name,
            "distances": ",".join(repr(v) for v in exp.distances),
            "levels": ",".join(repr(v) for v in exp.levels),
            "radii": _join(exp.radii),
            "lemma_radii": _join(exp.lemma_radii),
            "f1": ",".join(repr(v) for v in exp.f1),
            "f2": ",".join(repr(v) for v in exp.f2),
        }
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    def with_overrides(
        self,
        seed: Optional[int] = None,
        replicas: Optional[int] = None,
        threads: Optional[int] = None,
        experiment: Optional[str] = None,
    ) -> "RunConfig":
        engine = self.engine.model_copy(update={
            k: v for k, v in (("seed", seed), ("replicas", replicas), ("threads", threads)) if v is not None
        })
        exp = self.experiment if experiment is None else ExperimentSpec(
            **{**self.experiment.model_dump(), "name": experiment}
        )
        return RunConfig.model_validate({**self.model_dump(), "engine": engine.model_dump(), "experiment": exp.model_dump()})
