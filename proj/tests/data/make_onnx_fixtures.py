"""Builds the small ONNX encoders used by the interpreter tests.

Each model is exported with torch, tagged with the preprocessing metadata the
C++ loader expects, and run through onnxruntime on fixed inputs. The
onnxruntime outputs are frozen next to the model as the reference the C++
interpreter must reproduce.

    python tests/data/make_onnx_fixtures.py tests/data/onnx
"""

import hashlib
import json
import pathlib
import sys

import numpy as np
import onnx
import onnxruntime as ort
import torch
import torch.nn.functional as F
from torch import nn
from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

CLIP_MEAN = [0.48145466, 0.4578275, 0.40821073]
CLIP_STD = [0.26862954, 0.26130258, 0.27577711]


class TinyViT(nn.Module):
    """CLIP vision tower + projection, returning image embeddings."""

    def __init__(self):
        super().__init__()
        cfg = CLIPVisionConfig(
            hidden_size=32,
            intermediate_size=64,
            projection_dim=16,
            num_hidden_layers=2,
            num_attention_heads=4,
            image_size=32,
            patch_size=8,
            hidden_act="quick_gelu",
        )
        self.model = CLIPVisionModelWithProjection(cfg).eval()

    def forward(self, pixels):
        return self.model(pixel_values=pixels).image_embeds


class AttentionPool(nn.Module):
    """Attention pooling head of the CLIP ResNets."""

    def __init__(self, spatial, width, heads, out_dim):
        super().__init__()
        self.pos = nn.Parameter(torch.randn(spatial * spatial + 1, width) / width**0.5)
        self.k = nn.Linear(width, width)
        self.q = nn.Linear(width, width)
        self.v = nn.Linear(width, width)
        self.c = nn.Linear(width, out_dim)
        self.heads = heads

    def forward(self, x):
        x = x.flatten(start_dim=2).permute(2, 0, 1)
        x = torch.cat([x.mean(dim=0, keepdim=True), x], dim=0)
        x = x + self.pos[:, None, :].to(x.dtype)
        x, _ = F.multi_head_attention_forward(
            query=x[:1], key=x, value=x,
            embed_dim_to_check=x.shape[-1], num_heads=self.heads,
            q_proj_weight=self.q.weight, k_proj_weight=self.k.weight, v_proj_weight=self.v.weight,
            in_proj_weight=None,
            in_proj_bias=torch.cat([self.q.bias, self.k.bias, self.v.bias]),
            bias_k=None, bias_v=None, add_zero_attn=False, dropout_p=0.0,
            out_proj_weight=self.c.weight, out_proj_bias=self.c.bias,
            use_separate_proj_weight=True, training=False, need_weights=False,
        )
        return x.squeeze(0)


class Bottleneck(nn.Module):
    def __init__(self, cin, planes, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.pool = nn.AvgPool2d(stride) if stride > 1 else nn.Identity()
        self.conv3 = nn.Conv2d(planes, planes * 2, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * 2)
        self.down = nn.Sequential(nn.AvgPool2d(stride), nn.Conv2d(cin, planes * 2, 1, bias=False),
                                  nn.BatchNorm2d(planes * 2))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(self.pool(out)))
        return F.relu(out + self.down(x))


class TinyResNet(nn.Module):
    """Modified-ResNet layout of the CLIP RN backbones at toy width."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(8), nn.ReLU(),
            nn.Conv2d(8, 8, 3, padding=1, bias=False), nn.BatchNorm2d(8), nn.ReLU(),
            nn.AvgPool2d(2),
        )
        self.layer = Bottleneck(8, 8, 2)
        self.head = AttentionPool(4, 16, 4, 12)

    def forward(self, x):
        return self.head(self.layer(self.stem(x)))


class TinyCNN(nn.Module):
    """Grouped/strided conv, max pooling, GELU, global pooling and Gemm."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 12, 5, stride=2, padding=2)
        self.conv2 = nn.Conv2d(12, 12, 3, padding=1, groups=3)
        self.bn = nn.BatchNorm2d(12)
        self.fc = nn.Linear(12, 10)

    def forward(self, x):
        x = F.max_pool2d(F.gelu(self.conv1(x)), 3, stride=2, padding=1)
        x = torch.sigmoid(self.bn(self.conv2(x))) * x
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return F.layer_norm(self.fc(x), (10,))


def randomize_batchnorm(module, gen):
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.running_mean.copy_(torch.randn(m.num_features, generator=gen) * 0.1)
            m.running_var.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
            m.weight.data.copy_(torch.rand(m.num_features, generator=gen) + 0.5)
            m.bias.data.copy_(torch.randn(m.num_features, generator=gen) * 0.1)


def export(model, name, size, backbone, outdir, mean, std, batch=3):
    gen = torch.Generator().manual_seed(1234)
    randomize_batchnorm(model, gen)
    model.eval()
    path = outdir / f"{name}.onnx"
    dummy = torch.zeros(1, 3, size, size)
    torch.onnx.export(model, dummy, str(path), input_names=["pixels"], output_names=["embeds"],
                      dynamic_axes={"pixels": {0: "batch"}, "embeds": {0: "batch"}},
                      opset_version=17, dynamo=False)
    proto = onnx.load(str(path))
    meta = {"input_size": str(size), "mean": ",".join(map(str, mean)),
            "std": ",".join(map(str, std)), "backbone_name": backbone}
    del proto.metadata_props[:]
    for k, v in meta.items():
        entry = proto.metadata_props.add()
        entry.key, entry.value = k, v
    onnx.save(proto, str(path))

    inputs = torch.randn(batch, 3, size, size, generator=gen).numpy().astype(np.float32)
    sess = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
    outputs = sess.run(None, {"pixels": inputs})[0]
    with torch.no_grad():
        torch_out = model(torch.from_numpy(inputs)).numpy()
    assert np.allclose(outputs, torch_out, atol=1e-4), "onnxruntime disagrees with torch"
    doc = {"model": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
           "backbone_name": backbone, "input_size": size, "mean": list(mean), "std": list(std), "input_shape": list(inputs.shape), "output_shape": list(outputs.shape),
           "input": inputs.ravel().tolist(), "output": outputs.ravel().tolist()}
    (outdir / f"{name}.expected.json").write_text(json.dumps(doc))
    ops = sorted({n.op_type for n in proto.graph.node})
    print(f"{name}: output {outputs.shape}, ops {ops}")


def main():
    outdir = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/onnx")
    outdir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    export(TinyViT(), "tiny_vit", 32, "tiny-ViT", outdir, CLIP_MEAN, CLIP_STD)
    torch.manual_seed(1)
    export(TinyResNet(), "tiny_resnet", 32, "tiny-RN", outdir, CLIP_MEAN, CLIP_STD)
    torch.manual_seed(2)
    export(TinyCNN(), "tiny_cnn", 24, "tiny-CNN", outdir, [0.5], [0.25])


if __name__ == "__main__":
    main()
