# -*- coding: utf-8 -*-
# type: ignore
from uuid import UUID

from sqlalchemy import BigInteger, Column, Float, Index, Integer, String, Text

try:
    from sqlalchemy.orm import declarative_base
except ImportError:
    from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import Mapped
from sqlalchemy_utils.types.uuid import UUIDType


class Base:
    __allow_unmapped__ = True


Base = declarative_base(cls=Base)


class ResultRecord(Base):
    __abstract__ = True
    run_id: Column[UUID]


class TrainEpochRecord(ResultRecord):
    __tablename__ = "train_epochs"
    __abstract__ = True

    id: Mapped[int] = Column(
        BigInteger().with_variant(Integer(), "sqlite"),
        primary_key=True,
        autoincrement=True,
    )

    # Training run the epoch belongs to.
    run_id: Mapped[UUID] = Column(UUIDType(), nullable=False)

    epoch: Mapped[int] = Column(Integer(), nullable=False)

    # Mean per-image MSE over the epoch.
    loss: Mapped[float] = Column(Float(), nullable=False)

    # Wall time, absent when timestamps are disabled.
    seconds: Mapped[float] = Column(Float(), nullable=True)

    checkpoint_path: Mapped[str] = Column(Text(), nullable=False, default="")

    __table_args__ = (Index("train_epochs_run_idx", "run_id", "epoch", unique=True),)


class SweepPointRecord(ResultRecord):
    __tablename__ = "sweep_points"
    __abstract__ = True

    id: Mapped[int] = Column(
        BigInteger().with_variant(Integer(), "sqlite"),
        primary_key=True,
        autoincrement=True,
    )

    run_id: Mapped[UUID] = Column(UUIDType(), nullable=False)

    model_id: Mapped[str] = Column(String(length=255), nullable=False)

    # SNR seen by the AF modules and SNR of the channel; equal unless mismatched.
    snr_fb_db: Mapped[float] = Column(Float(), nullable=False)
    snr_true_db: Mapped[float] = Column(Float(), nullable=False)

    mean_psnr_db: Mapped[float] = Column(Float(), nullable=False)
    std_psnr_db: Mapped[float] = Column(Float(), nullable=False)
    repeats: Mapped[int] = Column(Integer(), nullable=False)

    __table_args__ = (
        Index(
            "sweep_points_run_idx",
            "run_id",
            "model_id",
            "snr_fb_db",
            "snr_true_db",
            unique=True,
        ),
    )
