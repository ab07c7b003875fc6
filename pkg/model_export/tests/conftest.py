import pytest
import torch


class ToyDetector(torch.nn.Module):
    """Boxes the bright brain-window region that is dark in the bone window."""

    class_names = ["IPH", "IVH", "SAH", "EDH", "SDH"]

    def __init__(self, conf=0.9):
        super().__init__()
        self.conf = torch.nn.Parameter(torch.tensor(float(conf)))

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        bright = (image[0, 0] > 0.8) & (image[0, 2] < 0.5)
        if not bool(bright.any()):
            return torch.zeros((0, 6))
        idx = torch.nonzero(bright).float()
        y0, x0 = idx.min(dim=0).values.unbind()
        y1, x1 = idx.max(dim=0).values.unbind()
        conf = torch.clamp(self.conf, 0.0, 1.0)
        return torch.stack([x0, y0, x1 + 1, y1 + 1, conf, torch.zeros(())]).unsqueeze(0)


class ToyEncoder(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.scale = torch.nn.Parameter(torch.tensor(1.0))

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return image * self.scale


class ToyDecoder(torch.nn.Module):
    """Marks bright brain-window pixels, restricted to the box when given."""

    def __init__(self):
        super().__init__()
        self.threshold = torch.nn.Parameter(torch.tensor(0.8))

    def forward(self, embedding: torch.Tensor, box: torch.Tensor,
                has_box: torch.Tensor, points: torch.Tensor,
                labels: torch.Tensor) -> torch.Tensor:
        bright = embedding[0, 0] > self.threshold
        h, w = bright.shape
        if bool(has_box[0] > 0):
            ys = torch.arange(h).unsqueeze(1).expand(h, w).float()
            xs = torch.arange(w).unsqueeze(0).expand(h, w).float()
            region = (xs >= box[0]) & (ys >= box[1]) & (xs < box[2]) & (ys < box[3])
            bright = bright & region
        return torch.where(bright, torch.ones(()), -torch.ones(()))


class ToySegmenter(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.encoder = ToyEncoder()
        self.decoder = ToyDecoder()

    def forward(self, image: torch.Tensor, box: torch.Tensor,
                has_box: torch.Tensor, points: torch.Tensor,
                labels: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(image), box, has_box, points, labels)


@pytest.fixture
def detector_checkpoint(tmp_path):
    path = tmp_path / "detector_ckpt.pt"
    torch.jit.script(ToyDetector()).save(str(path))
    return path


@pytest.fixture
def segmenter_checkpoint(tmp_path):
    path = tmp_path / "segmenter_ckpt.pt"
    torch.jit.script(ToySegmenter()).save(str(path))
    return path
