"""Child-process runner for one world program.

Usage: python3 runner.py WORKDIR

WORKDIR holds program.py, scene.json and input.rgb. Frames are written to
WORKDIR/frames/%05d.png and the outcome to WORKDIR/result.json. Toolbox
calls travel as JSON lines: requests on the original stdout, replies on
stdin. Anything the program prints goes to stderr.
"""

import builtins
import json
import linecache
import os
import struct
import sys
import traceback
import zlib

EXIT_OK = 0
EXIT_RUNTIME = 10
EXIT_CONTRACT = 11
EXIT_OOM = 12

PROGRAM_FILE = "world_program.py"
PROGRAM_MODULE = "__world_program__"


class ContractViolation(Exception):
    pass


class ToolboxError(RuntimeError):
    pass


def write_png(path, frame):
    h, w, _ = frame.shape
    rows = np.concatenate([np.zeros((h, 1), dtype=np.uint8), frame.reshape(h, w * 3)], axis=1)

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header))
        f.write(chunk(b"IDAT", zlib.compress(rows.tobytes(), 3)))
        f.write(chunk(b"IEND", b""))


class Channel:
    def __init__(self, workdir, out, inp, input_image):
        self.workdir = workdir
        self.out = out
        self.inp = inp
        self.input_image = input_image
        self.calls = 0
        self.files = 0
        os.makedirs(os.path.join(workdir, "rpc"), exist_ok=True)

    def send(self, msg):
        self.out.write(json.dumps(msg, allow_nan=False) + "\n")
        self.out.flush()

    def encode(self, obj):
        if isinstance(obj, np.ndarray):
            if obj is self.input_image or (
                obj.shape == self.input_image.shape
                and obj.dtype == self.input_image.dtype
                and np.array_equal(obj, self.input_image)
            ):
                return {"__input__": True}
            if obj.dtype == np.bool_:
                dtype, data = "bool", obj.astype(np.uint8)
            elif obj.dtype == np.uint8:
                dtype, data = "uint8", obj
            elif np.issubdtype(obj.dtype, np.integer):
                dtype, data = "int64", obj.astype("<i8")
            elif np.issubdtype(obj.dtype, np.floating):
                dtype, data = "float64", obj.astype("<f8")
            else:
                raise ToolboxError("cannot send array of dtype %s to the toolbox" % obj.dtype)
            self.files += 1
            rel = "rpc/c%05d.bin" % self.files
            np.ascontiguousarray(data).tofile(os.path.join(self.workdir, rel))
            return {"__array__": {"file": rel, "dtype": dtype, "shape": list(obj.shape)}}
        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, dict):
            return {str(k): self.encode(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [self.encode(v) for v in obj]
        if obj is None or isinstance(obj, (bool, int, float, str)):
            return obj
        raise ToolboxError("cannot send %s to the toolbox" % type(obj).__name__)

    def decode(self, obj):
        if isinstance(obj, dict):
            spec = obj.get("__array__")
            if spec is not None and len(obj) == 1:
                dtype = {"bool": np.uint8, "uint8": np.uint8, "int64": "<i8", "float64": "<f8"}[spec["dtype"]]
                arr = np.fromfile(os.path.join(self.workdir, spec["file"]), dtype=dtype).reshape(spec["shape"])
                return arr.astype(bool) if spec["dtype"] == "bool" else arr
            return {k: self.decode(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [self.decode(v) for v in obj]
        return obj

    def call(self, op, **args):
        self.calls += 1
        self.send({"type": "call", "id": self.calls, "op": op, "args": self.encode(args)})
        line = self.inp.readline()
        if not line:
            raise ToolboxError("toolbox channel closed")
        reply = json.loads(line)
        if not reply.get("ok"):
            raise ToolboxError("%s: %s" % (op, reply.get("error", "unknown error")))
        return self.decode(reply.get("result"))


class API:
    """Toolbox operations, executed by the host process."""

    Error = ToolboxError

    def __init__(self, channel):
        self._channel = channel

    def segment(self, image, objects):
        return self._channel.call("segment", image=image, objects=list(objects))

    def pts3d(self, image):
        return self._channel.call("pts3d", image=image)

    def intrinsics(self, image):
        return self._channel.call("intrinsics", image=image)

    def predict_ground_plane(self, points, iterations=500, inlier_threshold=0.01):
        return self._channel.call(
            "predict_ground_plane", points=np.asarray(points, dtype=float), iterations=iterations,
            inlier_threshold=inlier_threshold)

    def fit_3d_shape(self, point_cloud, shape_class, iterations=500, inlier_threshold=0.01):
        return self._channel.call(
            "fit_3d_shape", point_cloud=np.asarray(point_cloud, dtype=float), shape_class=shape_class,
            iterations=iterations, inlier_threshold=inlier_threshold)

    def fit_2d_shape(self, mask, shape_class):
        return self._channel.call("fit_2d_shape", mask=np.asarray(mask, dtype=bool), shape_class=shape_class)

    def generate_surface_mesh(self, vertices, indices, mass=0.0):
        return self._channel.call(
            "generate_surface_mesh", vertices=np.asarray(vertices, dtype=float),
            indices=np.asarray(indices, dtype=np.int64), mass=mass)

    def create_world(self, kind="rigid3d", gravity=(0.0, -9.81, 0.0), ground=None):
        return self._channel.call("create_world", kind=kind, gravity=gravity, ground=ground)

    def add_rigid_body(self, world, shape, mass=1.0, position=None, velocity=(0, 0, 0), restitution=0.5):
        return self._channel.call(
            "add_rigid_body", world=world, shape=shape, mass=mass, position=position, velocity=velocity,
            restitution=restitution)

    def add_soft_body(self, world, mesh, mass=1.0, velocity=(0, 0, 0)):
        return self._channel.call("add_soft_body", world=world, mesh=mesh, mass=mass, velocity=velocity)

    def add_particles(self, world, positions, velocities=None, mass=1.0):
        return self._channel.call(
            "add_particles", world=world, positions=np.asarray(positions, dtype=float),
            velocities=None if velocities is None else np.asarray(velocities, dtype=float), mass=mass)

    def step_world(self, world, dt):
        return self._channel.call("step_world", world=world, dt=float(dt))

    def get_state(self, world):
        state = self._channel.call("get_state", world=world)
        return {int(k): v for k, v in state.items()}


class Simulator:
    """Base class of every world program."""

    def __init__(self, frame_size=(1024, 576), api=None, fps=30):
        self.frame_size = tuple(frame_size)
        self.api = api
        self.fps = fps

    def fit(self, image, text):
        raise NotImplementedError("fit")

    def update_simulation(self, dt):
        raise NotImplementedError("update_simulation")

    def render_frame(self):
        raise NotImplementedError("render_frame")

    def __iter__(self):
        return self

    def __next__(self):
        self.update_simulation(1.0 / self.fps)
        return self.render_frame()


def guarded_import(allowed):
    real_import = builtins.__import__

    def _import(name, globals=None, locals=None, fromlist=(), level=0):
        caller = globals if globals is not None else sys._getframe(1).f_globals
        if caller.get("__name__") == PROGRAM_MODULE:
            if level > 0:
                raise ImportError("disallowed import: relative imports are not permitted")
            top = name.split(".")[0]
            if top not in allowed:
                raise ImportError("disallowed import: %s" % top)
        return real_import(name, globals, locals, fromlist, level)

    return _import


def program_traceback(exc):
    """Traceback restricted to frames inside the world program."""
    te = traceback.TracebackException.from_exception(exc)
    seen = set()
    stack = [te]
    while stack:
        t = stack.pop()
        if t is None or id(t) in seen:
            continue
        seen.add(id(t))
        t.stack = traceback.StackSummary.from_list([f for f in t.stack if f.filename == PROGRAM_FILE])
        stack.extend([t.__cause__, t.__context__])
    return "".join(te.format())


def check_frame(frame, width, height, index):
    if not isinstance(frame, np.ndarray):
        try:
            frame = np.asarray(frame)
        except Exception:
            raise ContractViolation("render_frame() returned %s, expected a numpy array" % type(frame).__name__)
    if frame.shape != (height, width, 3):
        raise ContractViolation(
            "render_frame() returned shape %s at frame %d, expected (%d, %d, 3)"
            % (tuple(frame.shape), index, height, width))
    if frame.dtype != np.uint8:
        if not np.issubdtype(frame.dtype, np.number) or not np.all(np.isfinite(frame)):
            raise ContractViolation("render_frame() returned non-finite or non-numeric values at frame %d" % index)
        frame = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(frame)


def finish(workdir, code, status, message=""):
    with open(os.path.join(workdir, "result.json"), "w") as f:
        json.dump({"status": status, "traceback": message}, f)
    sys.stderr.flush()
    os._exit(code)


def main(workdir):
    global np
    out = os.fdopen(os.dup(1), "w", buffering=1)
    os.dup2(2, 1)
    sys.stdout = sys.stderr

    with open(os.path.join(workdir, "scene.json")) as f:
        scene = json.load(f)
    import numpy
    np = numpy
    import random

    width, height = scene["frame_size"]
    image = np.fromfile(os.path.join(workdir, "input.rgb"), dtype=np.uint8).reshape(
        scene["image_height"], scene["image_width"], 3)
    image.setflags(write=False)
    frames_dir = os.path.join(workdir, "frames")
    os.makedirs(frames_dir, exist_ok=True)

    try:
        import resource
        limit = int(scene["memory_mb"]) * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ImportError, ValueError, OSError):
        pass

    random.seed(scene["seed"])
    np.random.seed(scene["seed"] % (2 ** 32))
    builtins.__import__ = guarded_import(set(scene["allowed_imports"]))

    with open(os.path.join(workdir, "program.py")) as f:
        source = f.read()
    linecache.cache[PROGRAM_FILE] = (len(source), None, source.splitlines(True), PROGRAM_FILE)
    channel = Channel(workdir, out, sys.stdin, image)
    api = API(channel) if scene.get("api", True) else None

    try:
        code = compile(source, PROGRAM_FILE, "exec")
        namespace = {"__name__": PROGRAM_MODULE, "__builtins__": builtins, "Simulator": Simulator, "API": API}
        exec(code, namespace)
        name = scene.get("class_name")
        cls = namespace.get(name) if name else None
        if cls is None:
            found = [v for v in namespace.values()
                     if isinstance(v, type) and issubclass(v, Simulator) and v is not Simulator]
            if not found:
                raise ContractViolation("program defines no Simulator subclass")
            cls = found[-1]
        sim = cls(frame_size=(width, height), api=api, fps=scene["fps"])
        sim.fit(np.array(image), scene["caption"])
        dt = 1.0 / scene["fps"]
        for k in range(scene["frame_count"]):
            sim.update_simulation(dt)
            frame = check_frame(sim.render_frame(), width, height, k)
            write_png(os.path.join(frames_dir, "%05d.png" % k), frame)
            channel.send({"type": "frame", "index": k})
    except ContractViolation as e:
        finish(workdir, EXIT_CONTRACT, "contract_violation", "ContractViolation: %s\n" % e)
    except MemoryError as e:
        finish(workdir, EXIT_OOM, "oom", program_traceback(e))
    except BaseException as e:
        finish(workdir, EXIT_RUNTIME, "runtime_error", program_traceback(e))
    finish(workdir, EXIT_OK, "ok")


if __name__ == "__main__":
    main(sys.argv[1])
