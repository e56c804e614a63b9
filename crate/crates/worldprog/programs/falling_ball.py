import numpy as np

PARAMS = {
    "gravity": 9.81,
    "pixels_per_meter": 100.0,
    "restitution": 0.6,
    "ball": {"query": "ball", "contrast": 60.0},
}


def contrast(image):
    rgb = image.reshape(-1, 3).astype(np.float64)
    background = np.median(rgb, axis=0)
    return np.abs(image.astype(np.float64) - background).max(axis=2)


class FallingBall(Simulator):
    def __init__(self, frame_size=(1024, 576), api=None, fps=30):
        super().__init__(frame_size=frame_size, api=api, fps=fps)
        self.background = None
        self.sprite = None
        self.y = 0.0
        self.vy = 0.0

    def find_ball(self, image):
        if self.api is not None:
            found = self.api.segment(image, [PARAMS["ball"]["query"]])[0]
            if found is not None:
                return np.asarray(found["mask"], dtype=bool)
        return contrast(image) > PARAMS["ball"]["contrast"]

    def fit(self, image, text):
        w, h = self.frame_size
        ys = (np.arange(h) * image.shape[0]) // h
        xs = (np.arange(w) * image.shape[1]) // w
        img = image[np.ix_(ys, xs)]
        mask = self.find_ball(image)[np.ix_(ys, xs)]
        if not mask.any():
            raise ValueError("no ball found in the input image")
        fill = np.median(img[~mask], axis=0) if (~mask).any() else np.zeros(3)
        self.background = img.copy()
        self.background[mask] = fill.astype(np.uint8)
        rows, cols = np.nonzero(mask)
        y0, y1, x0, x1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
        self.sprite = (img[y0:y1, x0:x1].copy(), mask[y0:y1, x0:x1].copy())
        self.x0 = int(x0)
        self.y = float(y0)
        self.vy = 0.0

    def update_simulation(self, dt):
        h = self.frame_size[1]
        size = self.sprite[1].shape[0]
        self.vy += PARAMS["gravity"] * PARAMS["pixels_per_meter"] * dt
        self.y += self.vy * dt
        lo, hi = 0.0, float(h - size)
        if self.y > hi:
            self.y = hi
            self.vy = -PARAMS["restitution"] * abs(self.vy)
        elif self.y < lo:
            self.y = lo
            self.vy = PARAMS["restitution"] * abs(self.vy)

    def render_frame(self):
        frame = self.background.copy()
        pixels, mask = self.sprite
        top = int(round(self.y))
        region = frame[top:top + mask.shape[0], self.x0:self.x0 + mask.shape[1]]
        region[mask] = pixels[mask]
        return frame
