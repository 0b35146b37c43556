"""Small CIFAR-style classifier used as an evolution seed.

Run as `python model.py` inside the rendered work directory. Dataset location
and epoch count come from GE_DATA_DIR and GE_EPOCHS.
"""

import json
import os

import torch
import torch.nn as nn
import torch.nn.functional as F


# @GE-BLOCK: get_optimizer
def get_optimizer(model, lr=0.01):
    return torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9, weight_decay=5e-4, nesterov=True)
# @GE-END


# @GE-BLOCK: SE
class SE(nn.Module):
    def __init__(self, cin, ratio=16):
        super().__init__()
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Conv2d(cin, max(cin // ratio, 1), 1)
        self.fc2 = nn.Conv2d(max(cin // ratio, 1), cin, 1)

    def forward(self, x):
        y = self.gap(x)
        y = F.relu(self.fc1(y))
        return x * torch.sigmoid(self.fc2(y))
# @GE-END


# @GE-BLOCK: SE_LN
class SE_LN(nn.Module):
    def __init__(self, cin):
        super().__init__()
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(cin, cin)
        self.ln = nn.LayerNorm(cin)

    def forward(self, x):
        y = self.gap(x).flatten(1)
        y = torch.sigmoid(self.ln(self.fc(y)))
        return x * y[:, :, None, None]
# @GE-END


# @GE-BLOCK: DFSEBV2
class DFSEBV2(nn.Module):
    def __init__(self, cin, dw_s, is_LN):
        super().__init__()
        self.pw1 = nn.Conv2d(cin, cin, 1)
        self.se = SE_LN(cin) if is_LN else SE(cin, 3)
        self.dw1 = DW(cin, dw_s)
        self.dw2 = DW(cin, dw_s)
        self.pw2 = nn.Conv2d(cin, cin, 1)

    def forward(self, x):
        y = F.hardswish(self.pw1(x))
        y = self.se(y)
        y = self.dw1(y)
        y = x + self.dw2(y)
        return F.hardswish(self.pw2(y))
# @GE-END


# @GE-BLOCK: FCT
class FCT(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.dw = nn.Conv2d(cin, cin, 4, 2, 1, groups=cin, bias=False)
        self.bn = nn.BatchNorm2d(cin)
        self.pw = nn.Conv2d(cin, cout - cin, 1)

    def forward(self, x):
        y = self.bn(self.dw(x))
        return torch.cat([y, F.relu(self.pw(y))], 1)
# @GE-END


# @GE-BLOCK: EVE
class EVE(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.pw = nn.Conv2d(2 * cin, cout, 1)

    def forward(self, x):
        y = torch.cat([F.max_pool2d(x, 2), F.avg_pool2d(x, 2)], 1)
        return F.hardswish(self.pw(y))
# @GE-END


# @GE-BLOCK: ME
class ME(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.bn = nn.BatchNorm2d(cin)
        self.pw = nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        y = F.max_pool2d(self.bn(x), 2)
        return F.hardswish(self.pw(y))
# @GE-END


# @GE-BLOCK: DW
class DW(nn.Module):
    def __init__(self, cin, dw_s):
        super().__init__()
        self.conv = nn.Conv2d(cin, cin, 3, dw_s, 1, groups=cin, bias=False)
        self.bn = nn.BatchNorm2d(cin)

    def forward(self, x):
        return F.hardswish(self.bn(self.conv(x)))
# @GE-END


# @GE-BLOCK: ExquisiteNetV2
class ExquisiteNetV2(nn.Module):
    def __init__(self, class_num, img_channels=3):
        super().__init__()
        self.features = nn.Sequential(
            ME(img_channels, 12),
            DFSEBV2(12, 1, True),
            FCT(12, 36),
            DFSEBV2(36, 1, True),
            EVE(36, 72),
            DFSEBV2(72, 1, False),
            ME(72, 144),
            DFSEBV2(144, 1, False),
            nn.Conv2d(144, 288, 1),
        )
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.drop = nn.Dropout(0.2)
        self.fc = nn.Linear(288, class_num)

    def forward(self, x):
        y = self.gap(self.features(x)).flatten(1)
        return self.fc(self.drop(y))
# @GE-END


def load_data(root, train):
    path = os.path.join(root, "train.pt" if train else "test.pt")
    images, labels = torch.load(path)
    ds = torch.utils.data.TensorDataset(images.float() / 255.0, labels.long())
    return torch.utils.data.DataLoader(ds, batch_size=64, shuffle=train)


def main():
    torch.manual_seed(0)
    data_dir = os.environ.get("GE_DATA_DIR", "data")
    epochs = int(os.environ.get("GE_EPOCHS", "1"))
    model = ExquisiteNetV2(class_num=10)
    opt = get_optimizer(model)
    for _ in range(epochs):
        model.train()
        for x, y in load_data(data_dir, True):
            opt.zero_grad()
            F.cross_entropy(model(x), y).backward()
            opt.step()
    model.eval()
    correct = total = 0
    with torch.no_grad():
        for x, y in load_data(data_dir, False):
            correct += (model(x).argmax(1) == y).sum().item()
            total += y.numel()
    params = sum(p.numel() for p in model.parameters())
    metrics = {"objectives": {"accuracy": correct / max(total, 1), "param_count": params}}
    print("GE_METRICS: " + json.dumps(metrics), flush=True)


if __name__ == "__main__":
    main()
