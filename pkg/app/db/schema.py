from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String, Text
from sqlalchemy.ext.declarative import declarative_base

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, nullable=False)
    command = Column(String(40), nullable=False)  # e.g. 'train-toy', 'check'
    arm = Column(String(40), nullable=True)  # ablation arm for training runs
    seed = Column(Integer, nullable=True)
    numeric_mode = Column(String(10), nullable=False)
    version = Column(String(80), nullable=False)
    wall_seconds = Column(Float, nullable=True)
    headline = Column(String(120), nullable=True)  # e.g. 'miou = 0.4312'
    manifest_path = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)
