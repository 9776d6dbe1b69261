"""Dataset readers (IDX, CIFAR-10 binary), synthetic generators and splits."""
